"""Cleaning, feature engineering, state encoding and train/test splitting."""

from __future__ import annotations

import bisect
import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .core import EQUIPMENT, PRIORITIES, RECORD_TYPES, DomainError, TaskId, TransactionRecord
from .datagen import SCHEMA_VERSION, round_half_up, stream
from .lexicon import DEFAULT_LEXICON, UNKNOWN, Lexicon


class AllValuesMissing(DomainError):
    code = "AllValuesMissing"


class EmptyColumn(DomainError):
    code = "EmptyColumn"


class NonPositiveActual(DomainError):
    code = "NonPositiveActual"


class UnsortedInput(DomainError):
    code = "UnsortedInput"


class TooFewRows(DomainError):
    code = "TooFewRows"


class MissingPriority(DomainError):
    code = "MissingPriority"


class UnknownLabelToken(DomainError):
    code = "UnknownLabelToken"


# ---------------------------------------------------------------------------
# column cleaning
# ---------------------------------------------------------------------------


def impute_mode(column: Sequence[Optional[str]]) -> list[str]:
    """Fill ``None`` entries with the most frequent present value.

    Ties go to the lexicographically smallest value.
    """
    mode = column_mode(column)
    return [mode if v is None else v for v in column]


def column_mode(column: Sequence[Optional[str]]) -> str:
    counts = Counter(v for v in column if v is not None)
    if not counts:
        raise AllValuesMissing("cannot impute a column with no present values")
    return min(counts, key=lambda v: (-counts[v], v))


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Order statistic at 1-based index ceil(pct * n) of the sorted sample."""
    n = len(values)
    if n == 0:
        raise EmptyColumn("quantile of an empty column")
    # the 1e-9 guard keeps float noise (0.07 * 100 = 7.000000000000001) from bumping the rank
    rank = max(1, min(n, math.ceil(pct * n - 1e-9)))
    return float(np.sort(np.asarray(values, dtype=float))[rank - 1])


def cap_outliers(column: Sequence[float], pct: float = 0.99) -> np.ndarray:
    if not 0.0 < pct < 1.0:
        raise ValueError(f"pct must be in (0, 1), got {pct}")
    arr = np.asarray(column, dtype=float)
    q = nearest_rank(arr, pct)
    return np.where(arr > q, q, arr)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-pass Pearson correlation; zero variance on either side gives 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return float(dx @ dy) / math.sqrt(sxx * syy)


def correlation_matrix(columns: Sequence[np.ndarray]) -> np.ndarray:
    x = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    d = x - x.mean(axis=0)
    ss = np.einsum("ij,ij->j", d, d)
    cov = d.T @ d
    denom = np.sqrt(np.outer(ss, ss))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    return r


@dataclass
class FeatureMatrix:
    column_names: list[str]
    columns: dict[str, np.ndarray]
    kinds: dict[str, str]
    row_count: int
    record_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.column_names)) != len(self.column_names):
            raise DomainError("column names must be unique")
        for name in self.column_names:
            if len(self.columns[name]) != self.row_count:
                raise DomainError(f"column {name} has {len(self.columns[name])} rows, expected {self.row_count}")

    def numeric_names(self) -> list[str]:
        return [c for c in self.column_names if self.kinds[c] == "numeric"]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        names = list(names)
        return FeatureMatrix(
            names,
            {n: self.columns[n] for n in names},
            {n: self.kinds[n] for n in names},
            self.row_count,
            list(self.record_ids),
        )

    def to_array(self) -> np.ndarray:
        """Dense float matrix; categorical columns become codes over sorted levels."""
        out = np.empty((self.row_count, len(self.column_names)), dtype=float)
        for j, name in enumerate(self.column_names):
            col = self.columns[name]
            if self.kinds[name] == "numeric":
                out[:, j] = col
            else:
                levels = {v: i for i, v in enumerate(sorted(set(col.tolist())))}
                out[:, j] = [levels[v] for v in col.tolist()]
        return out


def prune_correlated(m: FeatureMatrix, r_threshold: float = 0.8) -> tuple[FeatureMatrix, list[str]]:
    """Drop any numeric column whose |r| with an earlier surviving column exceeds the threshold."""
    numeric = m.numeric_names()
    if len(numeric) < 2:
        return m, []
    r = correlation_matrix([m.columns[c] for c in numeric])
    kept: list[int] = []
    removed: list[str] = []
    for j, name in enumerate(numeric):
        if any(abs(r[j, i]) > r_threshold for i in kept):
            removed.append(name)
        else:
            kept.append(j)
    gone = set(removed)
    return m.select([c for c in m.column_names if c not in gone]), removed


# ---------------------------------------------------------------------------
# engineered features
# ---------------------------------------------------------------------------


def efficiency_score(r: TransactionRecord, actual_minutes: float) -> float:
    if not actual_minutes > 0:
        raise NonPositiveActual(f"actual_minutes must be > 0, got {actual_minutes}")
    return min(max(r.planned_minutes / actual_minutes, 0.0), 2.0)


ROLLING_WINDOW_MINUTES = 10


def temporal_features(timestamps: Sequence[int]) -> tuple[list[int], list[int]]:
    """Inter-arrival gaps and arrivals within the trailing 10-minute window.

    The window for record i covers records j <= i with ts[i] - ts[j] < 10.
    Accepts timestamps or records carrying a ``timestamp`` attribute.
    """
    ts = [t.timestamp if hasattr(t, "timestamp") else int(t) for t in timestamps]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise UnsortedInput("temporal features need records sorted by timestamp")
    gaps = [0] + [b - a for a, b in zip(ts, ts[1:])]
    counts = [i - bisect.bisect_right(ts, t - ROLLING_WINDOW_MINUTES, 0, i) + 1 for i, t in enumerate(ts)]
    return gaps, counts


def normalize_language(token: str, lexicon: Lexicon = DEFAULT_LEXICON) -> str:
    return lexicon.normalize(token)


_PRIORITY_BY_TOKEN = {p.lower(): p for p in PRIORITIES}


def canonical_priority(token: Optional[str], normalize: bool = True, lexicon: Lexicon = DEFAULT_LEXICON) -> Optional[str]:
    """Raw priority token to a Priority name, or None if absent/unresolvable.

    With normalization off, Spanish tokens are not recognised and fall back to
    None, which downstream imputation then fills.
    """
    if token is None:
        return None
    if normalize:
        token = lexicon.normalize(token)
    return _PRIORITY_BY_TOKEN.get(token)


def canonical_status(token: str, normalize: bool = True, lexicon: Lexicon = DEFAULT_LEXICON) -> str:
    if normalize:
        return lexicon.normalize(token)
    return token if token in lexicon.en_vocab else UNKNOWN


# ---------------------------------------------------------------------------
# redacted observation and state vector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    """Observable part of a transaction; carries no ground-truth fields."""

    record_id: int
    record_type: str
    task_id: TaskId
    priority: Optional[str]  # canonical Priority name after normalization/imputation
    location: str
    quantity: int
    planned_minutes: float
    deadline_offset: int  # deadline minus timestamp
    language: str
    status_label: str
    equipment: str
    equipment_down: tuple[bool, bool, bool]
    arrival_burst: int
    priority_imputed: bool = False
    quantity_capped: bool = False


def redact(
    r: TransactionRecord,
    priority: Optional[str],
    status: str,
    priority_imputed: bool = False,
    quantity_capped: bool = False,
) -> Observation:
    return Observation(
        record_id=r.record_id,
        record_type=r.record_type,
        task_id=r.task_id,
        priority=priority,
        location=r.location,
        quantity=r.quantity,
        planned_minutes=r.planned_minutes,
        deadline_offset=r.deadline - r.timestamp,
        language=r.language,
        status_label=status,
        equipment=r.equipment,
        equipment_down=r.equipment_down,
        arrival_burst=r.arrival_burst,
        priority_imputed=priority_imputed,
        quantity_capped=quantity_capped,
    )


STATE_LAYOUT: tuple[tuple[str, int], ...] = (
    ("task_embedding", 8),
    ("priority_onehot", 4),
    ("record_type_onehot", 3),
    ("equipment_flags", 3),
    ("queue_stats", 2),
    ("time_to_deadline", 1),
    ("processing_time_norm", 1),
)
STATE_DIM = sum(w for _, w in STATE_LAYOUT)
EMBED_BUCKETS = 64
EMBED_DIM = 8
MAX_QUEUE = 64
ARRIVAL_NORM = 10.0
DEADLINE_NORM_MINUTES = 480.0


def layout_spans() -> dict[str, slice]:
    spans, start = {}, 0
    for name, width in STATE_LAYOUT:
        spans[name] = slice(start, start + width)
        start += width
    return spans


SPANS = layout_spans()


@dataclass(frozen=True)
class EncodingContext:
    equipment_flags: tuple[bool, bool, bool]
    queue_length: int
    arrivals_last_10min: int
    minutes_to_deadline: float
    p99_planned: float


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    bucket: int

    def span(self, name: str) -> np.ndarray:
        return self.values[SPANS[name]]


def embedding_bucket(task_id: TaskId) -> int:
    return task_id.as_int() % EMBED_BUCKETS


def encode_state(obs: Observation, ctx: EncodingContext, emb: np.ndarray) -> StateVector:
    if obs.priority is None:
        raise MissingPriority(f"record {obs.record_id} has no priority; impute before encoding")
    if obs.priority not in PRIORITIES:
        raise UnknownLabelToken(f"priority {obs.priority!r} is not a canonical priority")
    v = np.zeros(STATE_DIM)
    bucket = embedding_bucket(obs.task_id)
    v[SPANS["task_embedding"]] = emb[bucket]
    v[SPANS["priority_onehot"].start + PRIORITIES.index(obs.priority)] = 1.0
    v[SPANS["record_type_onehot"].start + RECORD_TYPES.index(obs.record_type)] = 1.0
    v[SPANS["equipment_flags"]] = [float(f) for f in ctx.equipment_flags]
    q = SPANS["queue_stats"].start
    v[q] = min(ctx.queue_length / MAX_QUEUE, 1.0)
    v[q + 1] = min(ctx.arrivals_last_10min / ARRIVAL_NORM, 1.0)
    v[SPANS["time_to_deadline"].start] = min(max(ctx.minutes_to_deadline / DEADLINE_NORM_MINUTES, 0.0), 1.0)
    v[SPANS["processing_time_norm"].start] = min(obs.planned_minutes / ctx.p99_planned, 1.0)
    return StateVector(v, bucket)


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    folds: tuple[tuple[int, ...], ...]
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "train_indices": list(self.train_indices),
            "test_indices": list(self.test_indices),
            "folds": [list(f) for f in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SplitSpec":
        return cls(tuple(d["train_indices"]), tuple(d["test_indices"]), tuple(tuple(f) for f in d["folds"]), d["seed"])


def split(labels: Sequence[bool], train_frac: float = 0.8, k: int = 5, seed: int = 0) -> SplitSpec:
    """Stratified shuffle split plus k stratified folds of the training part.

    ``labels`` may be booleans or records with ``truth_disrupted``.
    """
    labels = [bool(getattr(x, "truth_disrupted", x)) for x in labels]
    n = len(labels)
    if n < k:
        raise TooFewRows(f"need at least {k} rows, got {n}")
    rng = stream(seed, "split")
    pos = np.array([i for i, y in enumerate(labels) if y], dtype=np.int64)
    neg = np.array([i for i, y in enumerate(labels) if not y], dtype=np.int64)
    pos = pos[rng.permutation(len(pos))]
    neg = neg[rng.permutation(len(neg))]
    n_train = round_half_up(train_frac * n)
    pos_train = min(round_half_up(train_frac * len(pos)), n_train)
    neg_train = n_train - pos_train
    if neg_train > len(neg):
        neg_train = len(neg)
        pos_train = n_train - neg_train
    train = list(pos[:pos_train]) + list(neg[:neg_train])
    test = list(pos[pos_train:]) + list(neg[neg_train:])
    folds: list[list[int]] = [[] for _ in range(k)]
    # round-robin keeps both fold sizes and fold positive counts within one of each other
    for j, idx in enumerate(train):
        folds[j % k].append(int(idx))
    return SplitSpec(
        tuple(sorted(int(i) for i in train)),
        tuple(sorted(int(i) for i in test)),
        tuple(tuple(sorted(f)) for f in folds),
        seed,
    )


# ---------------------------------------------------------------------------
# whole-dataset preprocessing
# ---------------------------------------------------------------------------

MAX_FEATURES = 100
CORE_NUMERIC = (
    "quantity",
    "planned_minutes",
    "deadline_slack",
    "arrival_burst",
    "flag_conveyor",
    "flag_forklift",
    "flag_scanner",
    "required_equipment_flag",
    "inter_arrival",
    "rolling_count_10min",
)
CORE_CATEGORICAL = ("record_type", "priority", "language", "status_label", "zone", "equipment")


@dataclass
class Preprocessed:
    """Everything downstream stages need from one dataset."""

    matrix: FeatureMatrix
    removed: list[str]
    observations: list[Observation]  # dataset order
    inter_arrival: list[int]  # dataset order
    p99_planned: float
    priority_mode: str
    normalize: bool

    def sidecar(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "columns": [{"name": c, "kind": self.matrix.kinds[c]} for c in self.matrix.column_names],
            "removed": self.removed,
            "row_count": self.matrix.row_count,
            "state_layout": [{"name": n, "width": w} for n, w in STATE_LAYOUT],
            "state_dim": STATE_DIM,
            "p99_planned": self.p99_planned,
            "priority_mode": self.priority_mode,
            "normalize_language": self.normalize,
        }


def preprocess_records(
    records: Sequence[TransactionRecord],
    normalize: bool = True,
    lexicon: Lexicon = DEFAULT_LEXICON,
    r_threshold: float = 0.8,
    max_features: int = MAX_FEATURES,
) -> Preprocessed:
    n = len(records)
    if n == 0:
        raise EmptyColumn("no records to preprocess")
    order = sorted(range(n), key=lambda i: (records[i].timestamp, records[i].record_id))
    gaps_sorted, counts_sorted = temporal_features([records[i].timestamp for i in order])
    gaps = [0] * n
    counts = [0] * n
    for pos, i in enumerate(order):
        gaps[i] = gaps_sorted[pos]
        counts[i] = counts_sorted[pos]

    raw_priorities = [canonical_priority(r.priority, normalize, lexicon) for r in records]
    mode = column_mode(raw_priorities)
    priorities = impute_mode(raw_priorities)
    statuses = [canonical_status(r.status_label, normalize, lexicon) for r in records]
    p99 = nearest_rank([r.planned_minutes for r in records], 0.99)

    cols: dict[str, np.ndarray] = {}
    kinds: dict[str, str] = {}

    def add(name: str, values, kind: str):
        cols[name] = np.asarray(values, dtype=float if kind == "numeric" else object)
        kinds[name] = kind

    capped_quantity = cap_outliers([r.quantity for r in records], 0.99)
    add("quantity", capped_quantity, "numeric")
    add("planned_minutes", [r.planned_minutes for r in records], "numeric")
    add("deadline_slack", [r.deadline - r.timestamp for r in records], "numeric")
    add("arrival_burst", [r.arrival_burst for r in records], "numeric")
    for k, eq in enumerate(EQUIPMENT):
        add(f"flag_{eq}", [float(r.equipment_down[k]) for r in records], "numeric")
    add(
        "required_equipment_flag",
        [float(r.equipment_down[EQUIPMENT.index(r.equipment)]) for r in records],
        "numeric",
    )
    add("inter_arrival", gaps, "numeric")
    add("rolling_count_10min", counts, "numeric")
    add("record_type", [r.record_type for r in records], "categorical")
    add("priority", priorities, "categorical")
    add("language", [r.language for r in records], "categorical")
    add("status_label", statuses, "categorical")
    add("zone", [r.location_zone for r in records], "categorical")
    add("equipment", [r.equipment for r in records], "categorical")

    core = list(CORE_NUMERIC) + list(CORE_CATEGORICAL)
    extra_names = list(records[0].extra_fields.keys())
    for name in extra_names:
        values = [r.extra_fields[name] for r in records]
        if isinstance(values[0], str):
            add(name, values, "categorical")
        else:
            add(name, [float(v) for v in values], "numeric")

    m = FeatureMatrix(core + extra_names, cols, kinds, n, [r.record_id for r in records])
    m, removed = prune_correlated(m, r_threshold)
    m = _keep_top_features(m, set(core), max_features)

    observations = [
        redact(r, p, s, raw is None, r.quantity > q)
        for r, p, s, raw, q in zip(records, priorities, statuses, raw_priorities, capped_quantity)
    ]
    return Preprocessed(m, removed, observations, gaps, p99, mode, normalize)


def _column_variance(col: np.ndarray, kind: str) -> float:
    if kind == "numeric":
        return float(np.var(col))
    levels = {v: i for i, v in enumerate(sorted(set(col.tolist())))}
    return float(np.var([levels[v] for v in col.tolist()]))


def _keep_top_features(m: FeatureMatrix, protected: set[str], max_features: int) -> FeatureMatrix:
    """Core columns always stay; padding columns fill the rest by variance, then name."""
    core = [c for c in m.column_names if c in protected]
    rest = [c for c in m.column_names if c not in protected]
    budget = max(max_features - len(core), 0)
    if len(rest) <= budget:
        return m
    ranked = sorted(rest, key=lambda c: (-_column_variance(m.columns[c], m.kinds[c]), c))
    keep = set(ranked[:budget])
    return m.select(core + [c for c in rest if c in keep])


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_matrix(pre: Preprocessed, csv_path: Path | str, sidecar_path: Path | str) -> None:
    m = pre.matrix
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id"] + m.column_names)
        cols = [m.columns[c].tolist() for c in m.column_names]
        for i in range(m.row_count):
            w.writerow([m.record_ids[i]] + [_fmt(col[i]) for col in cols])
    Path(sidecar_path).write_text(json.dumps(pre.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_matrix(csv_path: Path | str, sidecar_path: Path | str) -> tuple[FeatureMatrix, dict[str, Any]]:
    side = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    kinds = {c["name"]: c["kind"] for c in side["columns"]}
    with open(csv_path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = header[1:]
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(names, start=1):
        raw = [row[j] for row in body]
        cols[name] = np.array([float(x) for x in raw]) if kinds[name] == "numeric" else np.array(raw, dtype=object)
    return FeatureMatrix(names, cols, kinds, len(body), [int(row[0]) for row in body]), side
