"""Deep Q-Network written directly on numpy.

The network is a plain MLP (rectifier hidden layers, identity output). When it
carries an embedding table, the first ``EMBED_DIM`` inputs of a state are
replaced by the row for the state's bucket and that row is trained by
backpropagation like any other weight.

TD targets discount by elapsed time: an experience that took ``elapsed`` units
is discounted by ``gamma ** (elapsed / time_unit)``. Instantaneous actions
(the remediations) are therefore not penalized for being extra decisions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

import numpy as np

from .core import DomainError
from .datagen import stream
from .preprocess import EMBED_BUCKETS, EMBED_DIM

CHECKPOINT_FORMAT = "wareorch-qnetwork"
CHECKPOINT_VERSION = 1


class DimensionMismatch(DomainError):
    code = "DimensionMismatch"


class EmptyBatch(DomainError):
    code = "EmptyBatch"


class EmptyGrid(DomainError):
    code = "EmptyGrid"


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.01
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 10000
    batch_size: int = 64
    target_sync_every: int = 500
    train_steps: int = 20000
    hidden_layers: int = 5
    hidden_width: int = 64
    replay_capacity: int = 50000
    clip_norm: float = 5.0
    # elapsed time that counts as one full discount step
    time_unit: float = 10.0
    use_embedding: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise DomainError("batch_size, hidden_layers and hidden_width must be positive")
        if self.time_unit <= 0:
            raise DomainError("time_unit must be positive")


@dataclass
class QNetwork:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionMismatch("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise DimensionMismatch(f"layer {i} has shape {w.shape}/{b.shape}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_actions(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "QNetwork":
        emb = None if self.embedding is None else self.embedding.copy()
        return QNetwork(list(self.layer_dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases], emb)

    def params(self) -> list[np.ndarray]:
        extra = [] if self.embedding is None else [self.embedding]
        return list(self.weights) + list(self.biases) + extra

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


def init_network(
    input_dim: int,
    n_actions: int,
    seed: int,
    hidden_layers: int = 5,
    hidden_width: int = 64,
    use_embedding: bool = False,
) -> QNetwork:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    rng = stream(seed, "dqn/init")
    dims = [input_dim] + [hidden_width] * hidden_layers + [n_actions]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    emb = rng.uniform(-0.1, 0.1, (EMBED_BUCKETS, EMBED_DIM)) if use_embedding else None
    return QNetwork(dims, weights, biases, emb)


# -- forward / backward ------------------------------------------------------


def _as_batch(net: QNetwork, x: Any, buckets: Any = None) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if hasattr(x, "values"):
        values, bucket = np.asarray(x.values, dtype=float), getattr(x, "bucket", None)
        X = values[None, :]
        b = None if bucket is None else np.array([bucket])
    else:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        b = None if buckets is None else np.asarray(buckets)
    if X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"input has {X.shape[1]} features, network expects {net.input_dim}")
    if net.embedding is not None and b is not None:
        X = X.copy()
        X[:, :EMBED_DIM] = net.embedding[b]
    return X, b


def _forward(net: QNetwork, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(net: QNetwork, x: Any, buckets: Any = None) -> np.ndarray:
    """Q-values for one state (1-D result) or a batch of rows (2-D result)."""
    X, _ = _as_batch(net, x, buckets)
    q = _forward(net, X)[-1]
    single = hasattr(x, "values") or np.ndim(x) == 1
    return q[0] if single else q


def _backward(net: QNetwork, acts: list[np.ndarray], dq: np.ndarray, buckets: Optional[np.ndarray]):
    n = len(net.weights)
    dws: list[np.ndarray] = [None] * n
    dbs: list[np.ndarray] = [None] * n
    delta = dq
    for i in range(n - 1, -1, -1):
        dws[i] = acts[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        dh = delta @ net.weights[i].T
        delta = dh * (acts[i] > 0) if i > 0 else dh
    demb = None
    if net.embedding is not None:
        demb = np.zeros_like(net.embedding)
        if buckets is not None:
            np.add.at(demb, buckets, delta[:, :EMBED_DIM])
    return dws, dbs, demb


def td_loss_and_grads(net: QNetwork, X: np.ndarray, actions: np.ndarray, targets: np.ndarray, buckets=None):
    """Mean squared TD error and its gradient with respect to every parameter."""
    Xe, b = _as_batch(net, X, buckets)
    acts = _forward(net, Xe)
    q = acts[-1]
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    loss = float(np.mean(err**2))
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / len(actions)
    return loss, _backward(net, acts, dq, b)


# -- replay ------------------------------------------------------------------


@dataclass(frozen=True)
class Experience:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    bucket: Optional[int] = None
    next_bucket: Optional[int] = None
    # gamma ** (elapsed / time_unit); None means a single plain gamma step
    discount: Optional[float] = None
    next_mask: Optional[np.ndarray] = None


@dataclass
class Batch:
    """Column-wise view of a set of experiences."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    discount: np.ndarray
    next_mask: np.ndarray
    bucket: Optional[np.ndarray] = None
    next_bucket: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.a)


def make_batch(experiences: Sequence[Experience], n_actions: int, gamma: float) -> Batch:
    if not experiences:
        raise EmptyBatch("a batch needs at least one experience")
    b = [e.bucket for e in experiences]
    nb = [e.next_bucket for e in experiences]
    return Batch(
        s=np.stack([np.asarray(e.s, dtype=float) for e in experiences]),
        a=np.array([e.a for e in experiences], dtype=np.int64),
        r=np.array([e.r for e in experiences], dtype=float),
        s_next=np.stack([np.asarray(e.s_next, dtype=float) for e in experiences]),
        done=np.array([e.done for e in experiences], dtype=bool),
        discount=np.array([gamma if e.discount is None else e.discount for e in experiences], dtype=float),
        next_mask=np.stack([np.ones(n_actions, bool) if e.next_mask is None else np.asarray(e.next_mask, bool) for e in experiences]),
        bucket=None if any(x is None for x in b) else np.array(b, dtype=np.int64),
        next_bucket=None if any(x is None for x in nb) else np.array(nb, dtype=np.int64),
    )


class ReplayBuffer:
    """Fixed-capacity ring; pushing past capacity overwrites the oldest entry.

    Storage is preallocated lazily from the first experience's shapes.
    """

    def __init__(self, capacity: int = 50000):
        if capacity < 1:
            raise DomainError("replay capacity must be positive")
        self.capacity = capacity
        self._next = 0
        self.size = 0
        self._cols: Optional[dict] = None

    def _alloc(self, e: Experience) -> None:
        cap, d = self.capacity, len(e.s)
        n_act = 0 if e.next_mask is None else len(e.next_mask)
        self._cols = {
            "s": np.zeros((cap, d)),
            "a": np.zeros(cap, dtype=np.int64),
            "r": np.zeros(cap),
            "s_next": np.zeros((cap, d)),
            "done": np.zeros(cap, dtype=bool),
            "discount": np.full(cap, np.nan),
            "next_mask": np.ones((cap, n_act), dtype=bool),
            "bucket": np.full(cap, -1, dtype=np.int64),
            "next_bucket": np.full(cap, -1, dtype=np.int64),
        }

    def push(self, e: Experience) -> None:
        if self._cols is None:
            self._alloc(e)
        c, i = self._cols, self._next
        c["s"][i] = e.s
        c["a"][i] = e.a
        c["r"][i] = e.r
        c["s_next"][i] = e.s_next
        c["done"][i] = e.done
        c["discount"][i] = np.nan if e.discount is None else e.discount
        if e.next_mask is not None:
            c["next_mask"][i] = e.next_mask
        else:
            c["next_mask"][i] = True
        c["bucket"][i] = -1 if e.bucket is None else e.bucket
        c["next_bucket"][i] = -1 if e.next_bucket is None else e.next_bucket
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _experience(self, i: int) -> Experience:
        c = self._cols
        disc = c["discount"][i]
        return Experience(
            s=c["s"][i].copy(),
            a=int(c["a"][i]),
            r=float(c["r"][i]),
            s_next=c["s_next"][i].copy(),
            done=bool(c["done"][i]),
            bucket=None if c["bucket"][i] < 0 else int(c["bucket"][i]),
            next_bucket=None if c["next_bucket"][i] < 0 else int(c["next_bucket"][i]),
            discount=None if np.isnan(disc) else float(disc),
            next_mask=c["next_mask"][i].copy() if c["next_mask"].shape[1] else None,
        )

    def experiences(self) -> list[Experience]:
        """Stored experiences, oldest first."""
        if self.size < self.capacity:
            order = range(self.size)
        else:
            order = list(range(self._next, self.capacity)) + list(range(self._next))
        return [self._experience(i) for i in order]

    def sample(self, rng: np.random.Generator, batch_size: int, gamma: float = 0.0) -> Batch:
        """Uniform sample with replacement. ``gamma`` fills unset discounts."""
        if self.size == 0:
            raise EmptyBatch("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, batch_size)
        c = self._cols
        disc = c["discount"][idx]
        b, nb = c["bucket"][idx], c["next_bucket"][idx]
        n_act = c["next_mask"].shape[1]
        return Batch(
            s=c["s"][idx],
            a=c["a"][idx],
            r=c["r"][idx],
            s_next=c["s_next"][idx],
            done=c["done"][idx],
            discount=np.where(np.isnan(disc), gamma, disc),
            next_mask=c["next_mask"][idx] if n_act else None,
            bucket=None if (b < 0).any() else b,
            next_bucket=None if (nb < 0).any() else nb,
        )


def epsilon_at(step: int, hp: Hyperparams) -> float:
    if hp.epsilon_decay_steps <= 0 or step >= hp.epsilon_decay_steps:
        return hp.epsilon_end
    frac = step / hp.epsilon_decay_steps
    return hp.epsilon_start + frac * (hp.epsilon_end - hp.epsilon_start)


def _clip(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = np.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


def td_targets(target_net: QNetwork, batch: Batch) -> np.ndarray:
    """y = r for terminal steps, else r + discount * max over legal next actions.

    ``discount`` is ``gamma ** (elapsed / time_unit)`` for the step; with no
    elapsed time recorded it is plain ``gamma``.
    """
    y = batch.r.astype(float).copy()
    live = ~batch.done
    if live.any():
        nb = None if batch.next_bucket is None else batch.next_bucket[live]
        q2 = forward(target_net, batch.s_next[live], nb)
        if batch.next_mask is not None:
            q2 = np.where(batch.next_mask[live], q2, -np.inf)
        y[live] = batch.r[live] + batch.discount[live] * q2.max(axis=1)
    return y


def train_step(net: QNetwork, target_net: QNetwork, batch, hp: Hyperparams) -> tuple[QNetwork, float]:
    """One SGD step on the mean squared TD error; returns a new network.

    ``batch`` is a :class:`Batch` or a sequence of :class:`Experience`.
    """
    if not isinstance(batch, Batch):
        if len(batch) == 0:
            raise EmptyBatch("train_step needs at least one experience")
        batch = make_batch(batch, net.n_actions, hp.gamma)
    if len(batch) == 0:
        raise EmptyBatch("train_step needs at least one experience")
    y = td_targets(target_net, batch)
    loss, (dws, dbs, demb) = td_loss_and_grads(net, batch.s, batch.a, y, batch.bucket)
    grads = dws + dbs + ([] if demb is None else [demb])
    grads = _clip(grads, hp.clip_norm)
    new = net.copy()
    n = len(dws)
    for i in range(n):
        new.weights[i] -= hp.learning_rate * grads[i]
        new.biases[i] -= hp.learning_rate * grads[n + i]
    if demb is not None:
        new.embedding -= hp.learning_rate * grads[2 * n]
    return new, loss


def act(net: QNetwork, state: Any, epsilon: float, rng: np.random.Generator, mask: Optional[np.ndarray] = None) -> int:
    """Epsilon-greedy over legal actions; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError("epsilon must lie in [0, 1]")
    if mask is None:
        mask = getattr(state, "mask", None)
    explore = rng.random() < epsilon
    if explore:
        legal = np.arange(net.n_actions) if mask is None else np.flatnonzero(mask)
        return int(legal[rng.integers(len(legal))])
    return greedy(net, state, mask)


def greedy(net: QNetwork, state: Any, mask: Optional[np.ndarray] = None) -> int:
    q = forward(net, state)
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    return int(np.argmax(q))


def q_margin(net: QNetwork, state: Any, mask: Optional[np.ndarray] = None) -> float:
    """max Q over remediation actions minus max Q over standard actions.

    Uses the fixed action layout [assign..., reroute, expedite, defer]; an
    optional legal mask drops actions that cannot be taken in ``state``.
    """
    return margin_from_q(forward(net, state), mask)


def margin_from_q(q: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    n = len(q)
    remediation = np.zeros(n, dtype=bool)
    remediation[n - 3 : n - 1] = True
    legal = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rem = q[remediation & legal]
    std = q[~remediation & legal]
    if len(rem) == 0 or len(std) == 0:
        return 0.0
    return float(np.max(rem) - np.max(std))


# -- training loop -----------------------------------------------------------


class Env(Protocol):
    """Minimal environment protocol used by :func:`train_dqn`.

    Observations expose ``values`` (1-D array), ``bucket`` (int or None) and
    ``mask`` (legal-action booleans or None). ``step`` returns
    ``(next_obs or None, reward, done, elapsed)``.
    """

    def reset(self) -> Any: ...

    def step(self, action: int) -> tuple[Any, float, bool, float]: ...


@dataclass
class TrainingLog:
    episode_rewards: list[float] = field(default_factory=list)
    episode_steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    target_syncs: int = 0


def _values(obs: Any) -> np.ndarray:
    """Observation vector from an env observation or a bare array."""
    return np.asarray(getattr(obs, "values", obs), dtype=float)


def train_dqn(
    env_factory: Callable[[int], Env],
    hp: Hyperparams,
    seed: int,
    input_dim: int,
    n_actions: int,
    loss_every: int = 100,
) -> tuple[QNetwork, TrainingLog]:
    """Epsilon-greedy DQN with replay and a periodically synced target network.

    ``env_factory(k)`` builds the environment for the k-th episode.
    """
    net = init_network(input_dim, n_actions, seed, hp.hidden_layers, hp.hidden_width, hp.use_embedding)
    log = TrainingLog()
    if hp.train_steps <= 0:
        return net, log
    target = net.copy()
    buf = ReplayBuffer(hp.replay_capacity)
    explore_rng = stream(seed, "dqn/explore")
    replay_rng = stream(seed, "dqn/replay")
    zeros = np.zeros(input_dim)
    step, episode = 0, 0
    recent: list[float] = []
    while step < hp.train_steps:
        env = env_factory(episode)
        obs = env.reset()
        done = obs is None
        total, n = 0.0, 0
        while not done and step < hp.train_steps:
            a = act(net, obs, epsilon_at(step, hp), explore_rng)
            nxt, r, done, elapsed = env.step(a)
            buf.push(
                Experience(
                    s=_values(obs),
                    a=a,
                    r=float(r),
                    s_next=zeros if nxt is None else _values(nxt),
                    done=bool(done),
                    bucket=getattr(obs, "bucket", None),
                    next_bucket=None if nxt is None else getattr(nxt, "bucket", None),
                    discount=hp.gamma ** (elapsed / hp.time_unit),
                    next_mask=None if nxt is None else getattr(nxt, "mask", None),
                )
            )
            if buf.size >= hp.batch_size:
                net, loss = train_step(net, target, buf.sample(replay_rng, hp.batch_size, hp.gamma), hp)
                recent.append(loss)
            step += 1
            if step % hp.target_sync_every == 0:
                target = net.copy()
                log.target_syncs += 1
            if len(recent) >= loss_every:
                log.losses.append(float(np.mean(recent)))
                recent = []
            total += r
            n += 1
            obs = nxt
        log.episode_rewards.append(total)
        log.episode_steps.append(n)
        episode += 1
    return net, log


# -- grid search -------------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    hp: Hyperparams
    fold_scores: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))


def grid_search(
    grid: Sequence[Hyperparams],
    folds: Sequence[Sequence[int]],
    run_fold: Callable[[Hyperparams, list[int], list[int]], float],
) -> tuple[Hyperparams, list[GridRow]]:
    """Pick the grid point with the best mean validation score across folds.

    ``run_fold(hp, train_idx, val_idx)`` trains on ``train_idx`` and returns the
    validation disruption-recovery accuracy. Ties go to the earliest point.
    """
    if not grid:
        raise EmptyGrid("grid search needs at least one grid point")
    rows = []
    for hp in grid:
        scores = []
        for k, val in enumerate(folds):
            train = [i for j, f in enumerate(folds) if j != k for i in f]
            scores.append(float(run_fold(hp, train, list(val))))
        rows.append(GridRow(hp, tuple(scores)))
    best = rows[0]
    for row in rows[1:]:
        if row.mean > best.mean:
            best = row
    return best.hp, rows


# -- checkpoints -------------------------------------------------------------


def network_to_dict(net: QNetwork, metadata: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(net.layer_dims),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "embedding": None if net.embedding is None else net.embedding.ravel().tolist(),
        "metadata": metadata or {},
    }


def network_from_dict(d: dict) -> QNetwork:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise DomainError("not a Q-network checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {d.get('version')}")
    dims = [int(x) for x in d["layer_dims"]]
    weights = [np.array(w, dtype=float).reshape(dims[i], dims[i + 1]) for i, w in enumerate(d["weights"])]
    biases = [np.array(b, dtype=float) for b in d["biases"]]
    emb = None if d.get("embedding") is None else np.array(d["embedding"], dtype=float).reshape(EMBED_BUCKETS, EMBED_DIM)
    return QNetwork(dims, weights, biases, emb)


def save_network(net: QNetwork, path, metadata: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net, metadata), fh, sort_keys=True)
        fh.write("\n")


def load_network(path) -> tuple[QNetwork, dict]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return network_from_dict(d), d.get("metadata", {})


def hyperparams_to_dict(hp: Hyperparams) -> dict:
    return asdict(hp)
