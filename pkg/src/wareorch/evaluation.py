"""Run policies over test shifts and turn the outcomes into metrics and CSVs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .baselines import ForestPolicy, RulePolicyConfig, fifo_policy, rule_policy
from .core import ActionSpec, DomainError
from .datagen import FieldCountOutOfRange
from . import dqn as dqn_mod
from .sim import ScenarioParams, TaskOutcome, TaskSpec, WarehouseState, enumerate_actions, observe, reset

HEATMAP_ROWS = (("Task", "Tasks"), ("Inventory", "Inventory"), ("Order", "Orders"))
# attribution order: the first category whose evidence was present wins
HEATMAP_COLUMNS = ("priority", "equipment", "timing", "quantity", "location")
SURGE_EVIDENCE_BURST = 3
SWEEP_RANGE = (20, 900)


class EmptyCounts(DomainError):
    code = "EmptyCounts"


class SingleClassLabels(DomainError):
    code = "SingleClassLabels"


class ZeroBaseline(DomainError):
    code = "ZeroBaseline"


class ConservationError(DomainError):
    code = "ConservationError"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_flags(cls, flagged: Iterable[bool], truth: Iterable[bool]) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for f, t in zip(flagged, truth):
            if f and t:
                tp += 1
            elif f:
                fp += 1
            elif t:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined_precision: bool = False


def metrics(c: ConfusionCounts) -> Metrics:
    if c.total == 0:
        raise EmptyCounts("no evaluated tasks")
    accuracy = (c.tp + c.tn) / c.total
    undefined = c.tp + c.fp == 0
    precision = 0.0 if undefined else c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, precision, recall, f1, undefined)


def roc(scores: Sequence[float], labels: Sequence[bool]) -> tuple[list[tuple[float, float, float]], float]:
    """ROC points as (threshold, fpr, tpr), starting at (inf, 0, 0), and the
    trapezoidal AUC. Tasks sharing a score enter together in one step."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    points = [(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            tp += int(y[j])
            fp += int(not y[j])
            j += 1
        points.append((float(s[i]), fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (_, x0, y0), (_, x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def time_reduction(policy_mean: float, baseline_mean: float) -> float:
    """Percent reduction of mean completion time relative to a baseline."""
    if not baseline_mean > 0:
        raise ZeroBaseline("baseline mean completion time must be positive")
    return 100.0 * (baseline_mean - policy_mean) / baseline_mean


# -- policies with scores ----------------------------------------------------


class Policy:
    """A scheduler plus the continuous flagging score read at a task's first decision."""

    name = "policy"

    def act(self, state: WarehouseState) -> ActionSpec:
        raise NotImplementedError

    def score(self, state: WarehouseState) -> float:
        return 0.0


class FifoPolicy(Policy):
    name = "fifo"

    def act(self, state):
        return fifo_policy(state)


class RulePolicy(Policy):
    name = "rule"

    def __init__(self, cfg: RulePolicyConfig = RulePolicyConfig()):
        self.cfg = cfg

    def act(self, state):
        return rule_policy(state, self.cfg)

    def score(self, state):
        return 1.0 if rule_policy(state, self.cfg).is_remediation else 0.0


class ForestScheduler(Policy):
    name = "forest"

    def __init__(self, forest_policy: ForestPolicy):
        self.inner = forest_policy

    def act(self, state):
        return self.inner(state)

    def score(self, state):
        return self.inner.predict(state.head_task.obs.record_id)[1]


class DQNPolicy(Policy):
    name = "dqn"

    def __init__(self, net: "dqn_mod.QNetwork"):
        self.net = net
        self._actions: dict[int, list[ActionSpec]] = {}

    def _q(self, state):
        return dqn_mod.forward(self.net, observe(state)), state.legal_mask()

    def act(self, state):
        q, mask = self._q(state)
        n = state.n_workers
        if n not in self._actions:
            self._actions[n] = enumerate_actions(n)
        return self._actions[n][int(np.argmax(np.where(mask, q, -np.inf)))]

    def score(self, state):
        q, mask = self._q(state)
        return dqn_mod.margin_from_q(q, mask)


class OraclePolicy(Policy):
    """Exhaustive short-horizon lookahead; usable only on tiny scenarios."""

    name = "oracle"

    def __init__(self, horizon: int = 3):
        self.horizon = horizon

    def act(self, state):
        from .sim import oracle_best_action

        return oracle_best_action(state, self.horizon)


# -- evaluation --------------------------------------------------------------


def episode_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def heatmap_category(o: TaskOutcome) -> str:
    """Attribute a mis-handled disrupted task to the first evidence present:
    an unusual priority (Urgent or unresolved), a visible fault on its
    equipment, a visible arrival burst, a capped quantity, else its location."""
    if o.priority_imputed or o.priority == "Urgent":
        return "priority"
    if o.equipment_flag:
        return "equipment"
    if o.arrival_burst >= SURGE_EVIDENCE_BURST:
        return "timing"
    if o.quantity_capped:
        return "quantity"
    return "location"


@dataclass
class EvalResult:
    policy: str
    confusion: ConfusionCounts
    recovered_disrupted: int
    total_disrupted: int
    scores: list[float]
    labels: list[bool]
    roc_points: list[tuple[float, float, float]]
    auc: float
    mean_completion_minutes: float
    heatmap: dict[tuple[str, str], int]
    n_tasks: int
    n_truncated: int
    total_reward: float
    outcomes: list[TaskOutcome] = field(default_factory=list, repr=False)

    @property
    def recovery_accuracy(self) -> float:
        return self.recovered_disrupted / self.total_disrupted if self.total_disrupted else 0.0

    @property
    def metrics(self) -> Metrics:
        return metrics(self.confusion)


def check_conservation(r: EvalResult, presented: int) -> None:
    """Confusion, heatmap and outcome counts must all reconcile."""
    problems = []
    if r.confusion.total != presented:
        problems.append(f"confusion total {r.confusion.total} != presented {presented}")
    if len(r.outcomes) != presented:
        problems.append(f"outcome count {len(r.outcomes)} != presented {presented}")
    if len({o.record_id for o in r.outcomes}) != len(r.outcomes):
        problems.append("a task appears more than once in the outcomes")
    mishandled = r.total_disrupted - r.recovered_disrupted
    if sum(r.heatmap.values()) != mishandled:
        problems.append(f"heatmap total {sum(r.heatmap.values())} != mis-handled {mishandled}")
    if r.confusion.tp + r.confusion.fn != r.total_disrupted:
        problems.append("tp + fn does not equal the disrupted count")
    if problems:
        raise ConservationError("; ".join(problems))


def evaluate_policy(
    policy: Policy,
    episodes: Sequence[Sequence[TaskSpec]],
    params: ScenarioParams,
    seed: int,
) -> EvalResult:
    """Greedy rollout of every episode; conservation is checked before returning."""
    if not episodes or not any(episodes):
        raise DomainError("evaluation needs at least one task")
    outcomes: list[TaskOutcome] = []
    first_score: dict[int, float] = {}
    total_reward = 0.0
    presented = 0
    for k, tasks in enumerate(episodes):
        state = reset(tasks, params, episode_seed(seed, k))
        presented += len(tasks)
        while not state.done:
            rid = state.head_task.obs.record_id
            if rid not in first_score:
                first_score[rid] = float(policy.score(state))
            state.step(policy.act(state))
        log = state.episode_log()
        outcomes.extend(log.outcomes)
        total_reward += log.total_reward
    flagged = [o.remediated for o in outcomes]
    truth = [o.truth_disrupted for o in outcomes]
    confusion = ConfusionCounts.from_flags(flagged, truth)
    recovered = sum(1 for o in outcomes if o.truth_disrupted and o.remediated and o.deadline_met)
    total_disrupted = sum(truth)
    # a task that never reached the head (truncated) scores as unflagged
    scores = [first_score.get(o.record_id, float("-inf")) for o in outcomes]
    finite = [s for s in scores if np.isfinite(s)]
    floor = min(finite) - 1.0 if finite else 0.0
    scores = [s if np.isfinite(s) else floor for s in scores]
    try:
        points, auc = roc(scores, truth)
    except SingleClassLabels:
        points, auc = [], float("nan")
    heat: dict[tuple[str, str], int] = {(row, col): 0 for _, row in HEATMAP_ROWS for col in HEATMAP_COLUMNS}
    row_name = dict(HEATMAP_ROWS)
    for o in outcomes:
        if o.truth_disrupted and not (o.remediated and o.deadline_met):
            heat[(row_name[o.record_type], heatmap_category(o))] += 1
    ends = [o.completion_minutes if o.completed_at is not None else o.wait_minutes for o in outcomes]
    result = EvalResult(
        policy=policy.name,
        confusion=confusion,
        recovered_disrupted=recovered,
        total_disrupted=total_disrupted,
        scores=scores,
        labels=truth,
        roc_points=points,
        auc=auc,
        mean_completion_minutes=float(np.mean(ends)),
        heatmap=heat,
        n_tasks=len(outcomes),
        n_truncated=sum(o.truncated for o in outcomes),
        total_reward=total_reward,
        outcomes=outcomes,
    )
    check_conservation(result, presented)
    return result


def schema_sweep(
    field_counts: Sequence[int],
    runner: Callable[[int, int], Mapping[str, float]],
    seed: int,
) -> list[tuple[int, str, float]]:
    """Run the full pipeline per field count; rows come back sorted by field
    count, then policy name."""
    for fc in field_counts:
        if not SWEEP_RANGE[0] <= fc <= SWEEP_RANGE[1]:
            raise FieldCountOutOfRange(fc)
    rows = []
    for fc in sorted(set(field_counts)):
        for policy, acc in sorted(runner(fc, seed).items()):
            rows.append((fc, policy, float(acc)))
    return rows


# -- CSV output --------------------------------------------------------------


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return f"{x:.6f}"


METRICS_HEADER = (
    "policy",
    "accuracy_cls",
    "accuracy_recovery",
    "precision",
    "recall",
    "f1",
    "auc",
    "mean_completion",
    "time_reduction_pct",
)


def metrics_rows(results: Sequence[EvalResult], baseline: Optional[EvalResult]) -> list[list[str]]:
    rows = []
    for r in results:
        m = r.metrics
        red = time_reduction(r.mean_completion_minutes, baseline.mean_completion_minutes) if baseline else None
        rows.append(
            [
                r.policy,
                _fmt(m.accuracy),
                _fmt(r.recovery_accuracy),
                _fmt(m.precision),
                _fmt(m.recall),
                _fmt(m.f1),
                _fmt(r.auc),
                _fmt(r.mean_completion_minutes),
                _fmt(red),
            ]
        )
    return rows


def _write(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_metrics_csv(path, results: Sequence[EvalResult], baseline: Optional[EvalResult]) -> None:
    _write(path, METRICS_HEADER, metrics_rows(results, baseline))


def write_roc_csv(path, r: EvalResult) -> None:
    rows = [["inf" if not np.isfinite(t) else _fmt(t), _fmt(x), _fmt(y)] for t, x, y in r.roc_points]
    _write(path, ("threshold", "fpr", "tpr"), rows)


def write_heatmap_csv(path, r: EvalResult) -> None:
    rows = [[row, col, r.heatmap[(row, col)]] for _, row in HEATMAP_ROWS for col in HEATMAP_COLUMNS]
    _write(path, ("record_type", "field_category", "count"), rows)


def write_sweep_csv(path, rows: Sequence[tuple[int, str, float]]) -> None:
    _write(path, ("field_count", "policy", "accuracy"), [[fc, p, _fmt(a)] for fc, p, a in rows])
