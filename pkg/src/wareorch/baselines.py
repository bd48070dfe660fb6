"""Comparison policies: a hand-written rule scheduler, a plain FIFO scheduler,
and a random-forest disruption classifier wrapped as a policy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DEFER, EXPEDITE, REROUTE, ActionSpec, DomainError
from .datagen import stream
from .dqn import DimensionMismatch
from .sim import WarehouseState

FOREST_FORMAT = "wareorch-forest"
FOREST_VERSION = 1


class SingleClassInput(DomainError):
    code = "SingleClassInput"


# -- scheduling policies -----------------------------------------------------


@dataclass(frozen=True)
class RulePolicyConfig:
    remediate_on_equipment_flag: bool = True
    surge_threshold: int = 5

    def __post_init__(self):
        if self.surge_threshold < 1:
            raise DomainError("surge_threshold must be at least 1")


def assign_or_defer(state: WarehouseState) -> ActionSpec:
    idle = state.idle_workers()
    return ActionSpec.assign(idle[0]) if idle else DEFER


def rule_policy(state: WarehouseState, cfg: RulePolicyConfig = RulePolicyConfig()) -> ActionSpec:
    """Reroute on a visible fault of the required equipment, expedite on a
    burst at or above the threshold, otherwise lowest idle worker or Defer."""
    if cfg.remediate_on_equipment_flag and state.own_flag():
        return REROUTE
    if state.arrivals_last_10min >= cfg.surge_threshold:
        return EXPEDITE
    return assign_or_defer(state)


def fifo_policy(state: WarehouseState) -> ActionSpec:
    """No remediation at all; the reference point for time reductions."""
    return assign_or_defer(state)


# -- Gini splits -------------------------------------------------------------


def gini(pos, n):
    """Binary Gini impurity from a positive count and a total (scalar or array)."""
    p = pos / n
    q = (n - pos) / n
    return 1.0 - p * p - q * q


def split_gain(pos_l, n_l, pos_r, n_r):
    """Impurity decrease of a split. Written once and shared by the fast path
    and the brute-force oracle, so both evaluate the identical expression."""
    n = n_l + n_r
    return gini(pos_l + pos_r, n) - (n_l / n) * gini(pos_l, n_l) - (n_r / n) * gini(pos_r, n_r)


def best_split(x: np.ndarray, y: np.ndarray) -> Optional[tuple[float, float]]:
    """Best (threshold, gain) for one feature; left side is x <= threshold.

    Candidate thresholds are midpoints between consecutive distinct values;
    ties in gain keep the lowest threshold. None when no split exists.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order].astype(np.int64)
    n = len(xs)
    cut = np.flatnonzero(xs[1:] != xs[:-1])
    if len(cut) == 0:
        return None
    pos_cum = np.cumsum(ys)
    n_l = (cut + 1).astype(float)
    pos_l = pos_cum[cut].astype(float)
    pos_r = float(pos_cum[-1]) - pos_l
    n_r = n - n_l
    gains = split_gain(pos_l, n_l, pos_r, n_r)
    k = int(np.argmax(gains))
    thr = (xs[cut[k]] + xs[cut[k] + 1]) / 2.0
    return float(thr), float(gains[k])


def best_split_bruteforce(x: Sequence[float], y: Sequence[bool]) -> Optional[tuple[float, float]]:
    """Reference oracle: try every midpoint and count both sides directly."""
    values = sorted(set(float(v) for v in x))
    best = None
    for a, b in zip(values[:-1], values[1:]):
        thr = (a + b) / 2.0
        n_l = float(sum(1 for v in x if v <= thr))
        pos_l = float(sum(1 for v, t in zip(x, y) if v <= thr and t))
        n_r = float(len(x)) - n_l
        pos_r = float(sum(1 for t in y if t)) - pos_l
        g = split_gain(pos_l, n_l, pos_r, n_r)
        if best is None or g > best[1]:
            best = (thr, g)
    return best


# -- forest ------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    max_depth: int = 8
    min_samples_split: int = 5

    def __post_init__(self):
        if self.n_trees < 1:
            raise DomainError("a forest needs at least one tree")
        if self.max_depth < 0 or self.min_samples_split < 2:
            raise DomainError("max_depth must be >= 0 and min_samples_split >= 2")


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    neg: list[int] = field(default_factory=list)
    pos: list[int] = field(default_factory=list)

    def _node(self, neg: int, pos: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.neg.append(neg)
        self.pos.append(pos)
        return len(self.feature) - 1

    def leaf_for(self, x: np.ndarray) -> int:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return i

    def predict(self, x: np.ndarray) -> bool:
        i = self.leaf_for(x)
        return self.pos[i] > self.neg[i]

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("feature", "threshold", "left", "right", "neg", "pos")}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(*(list(d[k]) for k in ("feature", "threshold", "left", "right", "neg", "pos")))


@dataclass
class Forest:
    trees: list[DecisionTree]
    n_features: int
    config: ForestConfig
    seed: int
    feature_names: list[str] = field(default_factory=list)
    # bootstrap membership per tree, kept for out-of-bag scoring
    in_bag: Optional[list[np.ndarray]] = None
    # a task is flagged when its positive-vote fraction exceeds this
    threshold: float = 0.5

    def __post_init__(self):
        if not self.trees:
            raise DomainError("a forest needs at least one tree")


def bootstrap_indices(seed: int, tree_index: int, n: int) -> np.ndarray:
    return stream(seed, f"forest/bootstrap/{tree_index}").integers(0, n, n)


def _grow(X: np.ndarray, y: np.ndarray, rows: np.ndarray, cfg: ForestConfig, rng: np.random.Generator) -> DecisionTree:
    tree = DecisionTree()
    n_feat = X.shape[1]
    k = max(1, int(math.isqrt(n_feat)))
    stack = [(rows, 0, None, None)]
    while stack:
        idx, depth, parent, side = stack.pop()
        pos = int(y[idx].sum())
        node = tree._node(len(idx) - pos, pos)
        if parent is not None:
            (tree.left if side == "l" else tree.right)[parent] = node
        if depth >= cfg.max_depth or pos == 0 or pos == len(idx) or len(idx) < cfg.min_samples_split:
            continue
        best = None
        for f in rng.choice(n_feat, size=k, replace=False):
            s = best_split(X[idx, f], y[idx])
            if s is not None and s[1] > 0 and (best is None or s[1] > best[2]):
                best = (int(f), s[0], s[1])
        if best is None:
            continue
        f, thr, _ = best
        tree.feature[node] = f
        tree.threshold[node] = thr
        go_left = X[idx, f] <= thr
        # right pushed first so the left subtree gets the lower node ids
        stack.append((idx[~go_left], depth + 1, node, "r"))
        stack.append((idx[go_left], depth + 1, node, "l"))
    return tree


def train_forest(
    X: np.ndarray,
    y: Sequence[bool],
    cfg: ForestConfig = ForestConfig(),
    seed: int = 0,
    feature_names: Sequence[str] = (),
) -> Forest:
    """Bagged Gini trees with sqrt(F) candidate features per node."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if len(np.unique(y)) < 2:
        raise SingleClassInput("forest training needs both classes")
    n = len(y)
    trees, bags = [], []
    for t in range(cfg.n_trees):
        rows = bootstrap_indices(seed, t, n)
        rng = stream(seed, f"forest/features/{t}")
        trees.append(_grow(X, y, rows, cfg, rng))
        bag = np.zeros(n, dtype=bool)
        bag[rows] = True
        bags.append(bag)
    f = Forest(trees, X.shape[1], cfg, seed, list(feature_names), bags)
    fracs = oob_vote_fractions(f, X)
    seen = ~np.isnan(fracs)
    if seen.any() and y[seen].any():
        f.threshold = f1_threshold(fracs[seen], y[seen])
    return f


def forest_votes(f: Forest, x: np.ndarray) -> int:
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n_features,):
        raise DimensionMismatch(f"expected {f.n_features} features, got {x.shape}")
    return sum(t.predict(x) for t in f.trees)


def forest_predict(f: Forest, x: np.ndarray) -> tuple[bool, float]:
    """Flag decision and the positive-vote fraction."""
    frac = forest_votes(f, x) / len(f.trees)
    return frac > f.threshold, frac


def oob_vote_fractions(f: Forest, X: np.ndarray) -> np.ndarray:
    """Positive-vote fraction per training row over the trees that did not
    see it; NaN for rows every tree saw."""
    if f.in_bag is None:
        raise DomainError("forest carries no bootstrap record")
    X = np.asarray(X, dtype=float)
    votes = np.zeros(len(X))
    counts = np.zeros(len(X))
    for t, bag in zip(f.trees, f.in_bag):
        for i in np.flatnonzero(~bag):
            votes[i] += t.predict(X[i])
            counts[i] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, votes / np.maximum(counts, 1), np.nan)


def f1_threshold(fracs: np.ndarray, y: np.ndarray) -> float:
    """Threshold t maximising F1 of the rule ``frac > t``. Candidates are 0.5
    and the midpoints below each distinct fraction; ties keep the higher t."""
    fracs = np.asarray(fracs, dtype=float)
    y = np.asarray(y, dtype=bool)
    levels = np.unique(fracs)
    below = np.concatenate([[levels[0] - 1.0], levels[:-1]])
    cands = np.concatenate([[0.5], (levels + below) / 2.0])
    best_t, best_f1 = 0.5, -1.0
    for t in sorted(set(cands.tolist()), reverse=True):
        flag = fracs > t
        tp = int(np.sum(flag & y))
        f1 = 2 * tp / (flag.sum() + y.sum()) if tp else 0.0
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return float(best_t)


def oob_accuracy(f: Forest, X: np.ndarray, y: Sequence[bool]) -> float:
    """Accuracy of out-of-bag majority votes over samples left out by some tree.
    Uses the plain majority, not the tuned flag threshold."""
    if f.in_bag is None:
        raise DomainError("forest carries no bootstrap record")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    correct = total = 0
    for i in range(len(y)):
        trees = [t for t, bag in zip(f.trees, f.in_bag) if not bag[i]]
        if not trees:
            continue
        votes = sum(t.predict(X[i]) for t in trees)
        correct += (2 * votes > len(trees)) == y[i]
        total += 1
    return correct / total if total else float("nan")


def forest_to_dict(f: Forest) -> dict:
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "n_features": f.n_features,
        "feature_names": list(f.feature_names),
        "seed": f.seed,
        "threshold": f.threshold,
        "config": {"n_trees": f.config.n_trees, "max_depth": f.config.max_depth, "min_samples_split": f.config.min_samples_split},
        "trees": [t.to_dict() for t in f.trees],
    }


def forest_from_dict(d: dict) -> Forest:
    if d.get("format") != FOREST_FORMAT:
        raise DomainError("not a forest checkpoint")
    if d.get("version") != FOREST_VERSION:
        raise DomainError(f"unsupported forest checkpoint version {d.get('version')}")
    return Forest(
        [DecisionTree.from_dict(t) for t in d["trees"]],
        int(d["n_features"]),
        ForestConfig(**d["config"]),
        int(d["seed"]),
        list(d.get("feature_names", [])),
        threshold=float(d["threshold"]),
    )


def save_forest(f: Forest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(f), fh, sort_keys=True)
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))


class ForestPolicy:
    """Classify each task once, on first sight; a positive gets one
    remediation (Reroute with visible downtime on its required equipment,
    otherwise Expedite) and then the rule assignment logic."""

    def __init__(self, forest: Forest, features: Callable[[int], np.ndarray]):
        self.forest = forest
        self.features = features
        self.predictions: dict[int, tuple[bool, float]] = {}

    def predict(self, record_id: int) -> tuple[bool, float]:
        if record_id not in self.predictions:
            self.predictions[record_id] = forest_predict(self.forest, self.features(record_id))
        return self.predictions[record_id]

    def __call__(self, state: WarehouseState) -> ActionSpec:
        task = state.head_task
        flagged, _ = self.predict(task.obs.record_id)
        h = state.head
        if flagged and not state.remediations[h]:
            return REROUTE if state.own_flag() else EXPEDITE
        return assign_or_defer(state)


def forest_policy(f: Forest, state: WarehouseState, x: np.ndarray) -> ActionSpec:
    """Stateless form: ``x`` is the head task's feature row."""
    flagged, _ = forest_predict(f, x)
    if flagged and not state.remediations[state.head]:
        return REROUTE if state.own_flag() else EXPEDITE
    return assign_or_defer(state)
