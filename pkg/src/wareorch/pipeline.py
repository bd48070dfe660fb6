"""In-memory pipeline stages shared by the command line and the acceptance tests.

generate -> preprocess -> split -> shifts -> train (DQN, forest) -> evaluate.
Every random draw comes from a named stream under the run seed, so a stage
rerun with the same configuration reproduces its outputs exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import dqn
from .baselines import Forest, ForestPolicy, train_forest
from .config import RunConfig
from .core import TransactionRecord
from .datagen import Dataset, GenConfig, generate_dataset, stream
from .evaluation import DQNPolicy, EvalResult, FifoPolicy, ForestScheduler, Policy, RulePolicy, evaluate_policy
from .preprocess import STATE_DIM, FeatureMatrix, Preprocessed, SplitSpec, preprocess_records, split
from .sim import ScenarioParams, TaskSpec, WarehouseEnv, build_tasks, shifts

POLICY_ORDER = ("fifo", "rule", "forest", "dqn")
# extra SeedSequence word keeping training episodes apart from evaluation episodes
_TRAIN_EPISODE_TAG = 0x747261696E


@dataclass
class Prepared:
    cfg: RunConfig
    records: list[TransactionRecord]
    pre: Preprocessed
    split: SplitSpec
    params: ScenarioParams
    train_shifts: list[list[TaskSpec]]
    test_shifts: list[list[TaskSpec]]
    # feature table read back from disk; defaults to the in-memory one
    matrix: Optional[FeatureMatrix] = None

    @property
    def features(self) -> FeatureMatrix:
        return self.matrix if self.matrix is not None else self.pre.matrix

    @property
    def labels(self) -> list[bool]:
        return [r.truth_disrupted for r in self.records]


def generate(cfg: RunConfig, **overrides) -> Dataset:
    return generate_dataset(cfg.gen_config(**overrides).validate())


def preprocess(cfg: RunConfig, records: Sequence[TransactionRecord], normalize: Optional[bool] = None) -> Preprocessed:
    return preprocess_records(
        records,
        normalize=cfg.normalize_language if normalize is None else normalize,
        r_threshold=cfg.r_threshold,
        max_features=cfg.max_features,
    )


def episodes_for(
    records: Sequence[TransactionRecord], indices: Sequence[int], pre: Preprocessed, params: ScenarioParams
) -> list[list[TaskSpec]]:
    return shifts(build_tasks(records, indices, pre), params.shift_size)


def prepare(
    cfg: RunConfig,
    records: Optional[Sequence[TransactionRecord]] = None,
    pre: Optional[Preprocessed] = None,
    spec: Optional[SplitSpec] = None,
    matrix: Optional[FeatureMatrix] = None,
) -> Prepared:
    """Fill in whichever upstream artifacts were not supplied."""
    if records is None:
        records = generate(cfg).records
    records = list(records)
    if pre is None:
        pre = preprocess(cfg, records)
    if spec is None:
        spec = split([r.truth_disrupted for r in records], seed=cfg.seed)
    params = cfg.scenario_params(pre.p99_planned)
    return Prepared(
        cfg,
        records,
        pre,
        spec,
        params,
        episodes_for(records, spec.train_indices, pre, params),
        episodes_for(records, spec.test_indices, pre, params),
        matrix,
    )


# -- DQN ---------------------------------------------------------------------


def train_episode_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, _TRAIN_EPISODE_TAG, k]).generate_state(1)[0])


def env_factory(episodes: Sequence[Sequence[TaskSpec]], params: ScenarioParams, seed: int) -> Callable[[int], WarehouseEnv]:
    """Episode k replays a training shift; the shift order is reshuffled every
    pass over the training set."""
    if not episodes:
        raise ValueError("no training episodes")
    n = len(episodes)
    orders: dict[int, np.ndarray] = {}

    def make(k: int) -> WarehouseEnv:
        epoch, pos = divmod(k, n)
        if epoch not in orders:
            orders[epoch] = stream(seed, f"dqn/shift-order/{epoch}").permutation(n)
        return WarehouseEnv(episodes[int(orders[epoch][pos])], params, train_episode_seed(seed, k))

    return make


def train_dqn_on(
    episodes: Sequence[Sequence[TaskSpec]], params: ScenarioParams, hp: dqn.Hyperparams, seed: int
) -> tuple[dqn.QNetwork, dqn.TrainingLog]:
    return dqn.train_dqn(env_factory(episodes, params, seed), hp, seed, STATE_DIM, params.n_workers + 3)


def grid_points(cfg: RunConfig) -> list[dqn.Hyperparams]:
    widths = cfg.grid_hidden_widths or (cfg.hidden_width,)
    rates = cfg.grid_learning_rates or (cfg.learning_rate,)
    return [
        cfg.hyperparams(hidden_width=w, learning_rate=lr, train_steps=cfg.grid_train_steps)
        for w in widths
        for lr in rates
    ]


def run_grid(prep: Prepared) -> tuple[dqn.Hyperparams, list[dqn.GridRow]]:
    """k-fold grid search over the training split, scored by validation
    recovery accuracy. Returns the winning point at the full step budget."""
    cfg = prep.cfg

    def run_fold(hp: dqn.Hyperparams, train_idx: Sequence[int], val_idx: Sequence[int]) -> float:
        net, _ = train_dqn_on(episodes_for(prep.records, train_idx, prep.pre, prep.params), prep.params, hp, cfg.seed)
        val = episodes_for(prep.records, val_idx, prep.pre, prep.params)
        return evaluate_policy(DQNPolicy(net), val, prep.params, cfg.seed).recovery_accuracy

    folds = [list(f) for f in prep.split.folds]
    best, rows = dqn.grid_search(grid_points(cfg), folds, run_fold)
    return cfg.hyperparams(hidden_width=best.hidden_width, learning_rate=best.learning_rate), rows


def train_dqn_model(prep: Prepared, hp: Optional[dqn.Hyperparams] = None) -> tuple[dqn.QNetwork, dqn.TrainingLog]:
    return train_dqn_on(prep.train_shifts, prep.params, hp or prep.cfg.hyperparams(), prep.cfg.seed)


# -- forest ------------------------------------------------------------------


def train_forest_model(prep: Prepared) -> Forest:
    X = prep.features.to_array()
    # feature rows follow dataset order, as do the split indices
    rows = np.asarray(prep.split.train_indices, dtype=int)
    y = np.asarray(prep.labels, dtype=bool)[rows]
    return train_forest(X[rows], y, prep.cfg.forest_config(), prep.cfg.seed, prep.features.column_names)


def forest_scheduler(forest: Forest, prep: Prepared) -> ForestScheduler:
    X = prep.features.to_array()
    row_of = {rid: i for i, rid in enumerate(prep.features.record_ids)}
    return ForestScheduler(ForestPolicy(forest, lambda rid: X[row_of[rid]]))


# -- evaluation --------------------------------------------------------------


def policies(prep: Prepared, net: Optional[dqn.QNetwork], forest: Optional[Forest]) -> list[Policy]:
    out: list[Policy] = [FifoPolicy(), RulePolicy(prep.cfg.rule_config())]
    if forest is not None:
        out.append(forest_scheduler(forest, prep))
    if net is not None:
        out.append(DQNPolicy(net))
    return out


def evaluate_all(prep: Prepared, pols: Sequence[Policy]) -> dict[str, EvalResult]:
    return {p.name: evaluate_policy(p, prep.test_shifts, prep.params, prep.cfg.seed) for p in pols}


def fit_and_evaluate(prep: Prepared) -> tuple[dqn.QNetwork, Forest, dict[str, EvalResult]]:
    net, _ = train_dqn_model(prep)
    forest = train_forest_model(prep)
    return net, forest, evaluate_all(prep, policies(prep, net, forest))


# -- schema sweep ------------------------------------------------------------


def _dqn_inputs_digest(prep: Prepared, hp: dqn.Hyperparams) -> str:
    """Hash of everything DQN training reads. The state vector does not depend
    on the padding fields, so sweep points that share it share one network."""
    h = hashlib.sha256()
    h.update(repr((prep.params, hp, prep.cfg.seed)).encode())
    for ep in prep.train_shifts:
        for t in ep:
            h.update(repr(t).encode())
    return h.hexdigest()


def sweep_runner(cfg: RunConfig) -> Callable[[int, int], dict[str, float]]:
    """Runner for ``evaluation.schema_sweep``: regenerate at the field count,
    preprocess, train both learners, and report recovery accuracy per policy."""
    trained: dict[str, dqn.QNetwork] = {}

    def run(field_count: int, seed: int) -> dict[str, float]:
        point = cfg.replace(field_count=field_count, n_records=cfg.sweep_n_records, seed=seed)
        prep = prepare(point)
        hp = point.hyperparams()
        key = _dqn_inputs_digest(prep, hp)
        if key not in trained:
            trained[key] = train_dqn_model(prep, hp)[0]
        forest = train_forest_model(prep)
        results = evaluate_all(prep, policies(prep, trained[key], forest))
        return {name: r.recovery_accuracy for name, r in results.items()}

    return run


# -- multilingual ablation ---------------------------------------------------


ABLATION_MULTILINGUAL_RATE = 0.2


def multilingual_ablation(cfg: RunConfig, net: dqn.QNetwork, gen: Optional[GenConfig] = None) -> dict[str, EvalResult]:
    """Evaluate an already trained DQN on a 20%-Spanish variant of the run,
    once with lexicon normalization and once without. ``gen`` is the
    generator configuration of the original dataset."""
    gen = cfg.gen_config() if gen is None else gen
    records = generate_dataset(replace(gen, multilingual_rate=ABLATION_MULTILINGUAL_RATE).validate()).records
    spec = split([r.truth_disrupted for r in records], seed=cfg.seed)
    out = {}
    for label, normalize in (("on", True), ("off", False)):
        prep = prepare(cfg, records, preprocess(cfg, records, normalize), spec)
        out[label] = evaluate_policy(DQNPolicy(net), prep.test_shifts, prep.params, cfg.seed)
    return out
