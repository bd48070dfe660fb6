"""Seeded synthetic transaction corpus with injected disruptions, Spanish labels,
missing priorities, outlier order batches and configurable schema width.

Every injector draws from its own named random stream, so output is a pure
function of :class:`GenConfig`. Streams are numpy ``PCG64`` generators keyed by
``SeedSequence(seed, spawn_key=(crc32(name),))``.
"""

from __future__ import annotations

import json
import math
import zlib
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import (
    CORE_FIELD_COUNT,
    DISRUPTION_TYPES,
    EQUIPMENT,
    LANGUAGES,
    RECORD_TYPES,
    REQUIRED_EQUIPMENT,
    DomainError,
    TaskId,
    TransactionRecord,
)
from .lexicon import DEFAULT_LEXICON, Lexicon

SCHEMA_VERSION = 1
MAX_FIELD_COUNT = 900

ARRIVAL_MEAN_MINUTES = 8.0
PLANNED_RANGE = (25.0, 45.0)
DEADLINE_FACTOR = 1.6
QUANTITY_RANGE = (1, 50)
OUTLIER_RANGE = (800, 1200)
DOWNTIME_SHARE = 0.6

# observation model
P_FLAG_GIVEN_DOWNTIME = 0.95
P_FLAG_GIVEN_CLEAN = 0.05
CLEAN_BURST_LEVELS = (1, 2, 3)
CLEAN_BURST_PROBS = (0.70, 0.24, 0.06)
# surges overlap the top clean burst level so that level alone is ambiguous
SURGE_BURST_LEVELS = (3, 4, 5, 6, 7, 8)
SURGE_BURST_PROBS = (0.30, 0.14, 0.14, 0.14, 0.14, 0.14)

PRIORITY_TOKENS_EN = ("low", "normal", "high", "urgent")
CLEAN_PRIORITY_PROBS = (0.25, 0.45, 0.20, 0.10)
SURGE_PRIORITY_PROBS = (0.05, 0.15, 0.10, 0.70)
STATUS_TOKENS_EN = ("open", "pick", "pack", "ship", "done", "delayed", "blocked", "down")

CATEGORICAL_LEVELS = tuple(f"c{i}" for i in range(8))
DUPLICATE_SOURCES = ("quantity", "planned_minutes", "arrival_burst", "deadline_slack")


class InvalidConfig(DomainError):
    code = "InvalidConfig"

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class FieldCountOutOfRange(InvalidConfig):
    code = "FieldCountOutOfRange"

    def __init__(self, value: int):
        super().__init__("field_count", f"{value} outside [{CORE_FIELD_COUNT}, {MAX_FIELD_COUNT}]")


@dataclass(frozen=True)
class GenConfig:
    n_records: int = 300_000
    disruption_rate: float = 0.05
    multilingual_rate: float = 0.10
    missing_rate: float = 0.03
    outlier_rate: float = 0.01
    field_count: int = 900
    n_workers: int = 8
    seed: int = 0

    def validate(self) -> "GenConfig":
        if not isinstance(self.n_records, int) or self.n_records < 1:
            raise InvalidConfig("n_records", f"must be a positive integer, got {self.n_records!r}")
        for name in ("disruption_rate", "multilingual_rate", "missing_rate", "outlier_rate"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
                raise InvalidConfig(name, f"must be in [0, 1], got {value!r}")
        if not isinstance(self.field_count, int) or not CORE_FIELD_COUNT <= self.field_count <= MAX_FIELD_COUNT:
            raise FieldCountOutOfRange(self.field_count)
        if not isinstance(self.n_workers, int) or self.n_workers < 1:
            raise InvalidConfig("n_workers", f"must be a positive integer, got {self.n_workers!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        return self


@dataclass
class Dataset:
    records: list[TransactionRecord]
    config: GenConfig
    manifest: dict[str, Any] = field(default_factory=dict)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def count_for_rate(rate: float, n: int) -> int:
    return round_half_up(rate * n)


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a master seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.Generator(np.random.PCG64(ss))


def scale_schema(cfg: GenConfig, field_count: int) -> GenConfig:
    if not isinstance(field_count, int) or not CORE_FIELD_COUNT <= field_count <= MAX_FIELD_COUNT:
        raise FieldCountOutOfRange(field_count)
    return replace(cfg, field_count=field_count)


# ---------------------------------------------------------------------------
# base corpus
# ---------------------------------------------------------------------------


def _type_column(n: int, rng: np.random.Generator) -> list[str]:
    n_inv = round_half_up(0.25 * n)
    n_ord = round_half_up(0.25 * n)
    n_task = n - n_inv - n_ord
    types = np.array(["Task"] * n_task + ["Inventory"] * n_inv + ["Order"] * n_ord, dtype=object)
    return list(types[rng.permutation(n)])


def clean_evidence(rng: np.random.Generator, n: int) -> tuple[list[tuple[bool, bool, bool]], np.ndarray]:
    """Evidence drawn for a record with no disruption (false alarms included)."""
    flagged = rng.random(n) < P_FLAG_GIVEN_CLEAN
    which = rng.integers(0, len(EQUIPMENT), n)
    flags = [tuple(bool(f and which[i] == k) for k in range(3)) for i, f in enumerate(flagged)]
    bursts = rng.choice(np.array(CLEAN_BURST_LEVELS), size=n, p=CLEAN_BURST_PROBS)
    return flags, bursts


def base_records(cfg: GenConfig) -> list[TransactionRecord]:
    n = cfg.n_records
    rng = stream(cfg.seed, "base")
    types = _type_column(n, rng)
    gaps = np.floor(rng.exponential(ARRIVAL_MEAN_MINUTES, n)).astype(np.int64)
    gaps[0] = 0
    timestamps = np.cumsum(gaps)
    task_ids = rng.integers(0, 10**18, n, dtype=np.int64)
    prio = rng.choice(len(PRIORITY_TOKENS_EN), size=n, p=CLEAN_PRIORITY_PROBS)
    aisles = rng.integers(1, 21, n)
    racks = rng.integers(1, 31, n)
    bins = rng.integers(1, 9, n)
    quantity = rng.integers(QUANTITY_RANGE[0], QUANTITY_RANGE[1] + 1, n)
    planned = np.round(rng.uniform(*PLANNED_RANGE, n), 2)
    status = rng.integers(0, len(STATUS_TOKENS_EN), n)
    flags, bursts = clean_evidence(rng, n)

    records = []
    for i in range(n):
        p = float(planned[i])
        ts = int(timestamps[i])
        records.append(
            TransactionRecord(
                record_id=i + 1,
                record_type=types[i],
                task_id=TaskId.from_int(int(task_ids[i])),
                timestamp=ts,
                priority=PRIORITY_TOKENS_EN[prio[i]],
                location=f"A{aisles[i]}-R{racks[i]}-B{bins[i]}",
                quantity=int(quantity[i]),
                planned_minutes=p,
                deadline=ts + round_half_up(DEADLINE_FACTOR * p),
                language="EN",
                status_label=STATUS_TOKENS_EN[status[i]],
                equipment=REQUIRED_EQUIPMENT[types[i]],
                equipment_down=flags[i],
                arrival_burst=int(bursts[i]),
            )
        )
    return records


# ---------------------------------------------------------------------------
# injectors
# ---------------------------------------------------------------------------


def _pick(rng: np.random.Generator, population: int, k: int) -> list[int]:
    if k <= 0 or population <= 0:
        return []
    return [int(i) for i in rng.choice(population, size=min(k, population), replace=False)]


def inject_disruptions(records: Sequence[TransactionRecord], rate: float, seed: int) -> list[TransactionRecord]:
    """Mark exactly ``round(rate * n)`` records disrupted, split 60/40 downtime/surge.

    Downtime raises the flag on the record's own equipment with probability
    P_FLAG_GIVEN_DOWNTIME (and clears any false alarm); a surge draws a queue burst of 3-8
    simultaneous arrivals and an escalated priority.
    """
    _check_rate(rate)
    out = list(records)
    rng = stream(seed, "disruptions")
    chosen = _pick(rng, len(out), count_for_rate(rate, len(out)))
    n_down = round_half_up(DOWNTIME_SHARE * len(chosen))
    flag_draws = rng.random(len(chosen))
    bursts = rng.choice(np.array(SURGE_BURST_LEVELS), size=len(chosen), p=SURGE_BURST_PROBS)
    prio = rng.choice(len(PRIORITY_TOKENS_EN), size=len(chosen), p=SURGE_PRIORITY_PROBS)
    for j, idx in enumerate(chosen):
        r = out[idx]
        if j < n_down:
            own = EQUIPMENT.index(r.equipment)
            flagged = flag_draws[j] < P_FLAG_GIVEN_DOWNTIME
            flags = tuple(bool(flagged and k == own) for k in range(3))
            out[idx] = replace(r, truth_disrupted=True, truth_disruption_type="EquipmentDowntime", equipment_down=flags)
        else:
            out[idx] = replace(
                r,
                truth_disrupted=True,
                truth_disruption_type="OrderSurge",
                arrival_burst=int(bursts[j]),
                priority=PRIORITY_TOKENS_EN[prio[j]],
            )
    return out


def inject_multilingual(
    records: Sequence[TransactionRecord], rate: float, seed: int, lexicon: Lexicon = DEFAULT_LEXICON
) -> list[TransactionRecord]:
    _check_rate(rate)
    out = list(records)
    rng = stream(seed, "multilingual")
    for idx in _pick(rng, len(out), count_for_rate(rate, len(out))):
        r = out[idx]
        out[idx] = replace(
            r,
            language="ES",
            status_label=lexicon.translate_to_es(r.status_label),
            priority=None if r.priority is None else lexicon.translate_to_es(r.priority),
        )
    return out


def inject_missing(records: Sequence[TransactionRecord], rate: float, seed: int) -> list[TransactionRecord]:
    """Blank the priority field on exactly ``round(rate * n)`` records."""
    _check_rate(rate)
    out = list(records)
    rng = stream(seed, "missing")
    for idx in _pick(rng, len(out), count_for_rate(rate, len(out))):
        out[idx] = replace(out[idx], priority=None)
    return out


def inject_outliers(records: Sequence[TransactionRecord], rate: float, seed: int) -> list[TransactionRecord]:
    """Give ``round(rate * n)`` Order records a bulk quantity in [800, 1200]."""
    _check_rate(rate)
    out = list(records)
    rng = stream(seed, "outliers")
    orders = [i for i, r in enumerate(out) if r.record_type == "Order"]
    picks = _pick(rng, len(orders), count_for_rate(rate, len(out)))
    values = rng.integers(OUTLIER_RANGE[0], OUTLIER_RANGE[1] + 1, len(picks))
    for j, p in enumerate(picks):
        idx = orders[p]
        out[idx] = replace(out[idx], quantity=int(values[j]))
    return out


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate <= 1.0:
        raise InvalidConfig("rate", f"must be in [0, 1], got {rate!r}")


# ---------------------------------------------------------------------------
# schema padding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PaddingField:
    name: str
    kind: str  # "categorical" | "numeric" | "duplicate"
    source: str = ""
    scale: float = 1.0


def padding_layout(field_count: int, seed: int) -> list[PaddingField]:
    """Deterministic padding schema: 70% categorical, 30% numeric of which a
    third (10% of all padding) are noisy copies of core numeric fields."""
    n_pad = field_count - CORE_FIELD_COUNT
    if n_pad <= 0:
        return []
    n_dup = round_half_up(0.10 * n_pad)
    n_num = max(round_half_up(0.30 * n_pad), n_dup)
    kinds = ["duplicate"] * n_dup + ["numeric"] * (n_num - n_dup) + ["categorical"] * (n_pad - n_num)
    rng = stream(seed, f"schema/{field_count}")
    order = rng.permutation(n_pad)
    scales = 10.0 ** rng.uniform(0.0, 2.0, n_pad)
    sources = rng.integers(0, len(DUPLICATE_SOURCES), n_pad)
    layout = []
    for j in range(n_pad):
        kind = kinds[order[j]]
        layout.append(
            PaddingField(
                name=f"ext_{j:03d}",
                kind=kind,
                source=DUPLICATE_SOURCES[sources[j]] if kind == "duplicate" else "",
                scale=float(np.round(scales[j], 6)),
            )
        )
    return layout


def _core_numeric(r: TransactionRecord, name: str) -> float:
    if name == "deadline_slack":
        return float(r.deadline - r.timestamp)
    return float(getattr(r, name))


def apply_padding(records: Sequence[TransactionRecord], field_count: int, seed: int) -> list[TransactionRecord]:
    layout = padding_layout(field_count, seed)
    if not layout:
        return [replace(r, extra_fields={}) for r in records]
    n = len(records)
    columns: list[list[Any]] = []
    for j, pf in enumerate(layout):
        rng = stream(seed, f"padding/{j}")
        if pf.kind == "categorical":
            codes = rng.integers(0, len(CATEGORICAL_LEVELS), n)
            columns.append([CATEGORICAL_LEVELS[c] for c in codes])
        elif pf.kind == "numeric":
            columns.append(np.round(rng.normal(0.0, pf.scale, n), 4).tolist())
        else:
            src = np.array([_core_numeric(r, pf.source) for r in records])
            sd = float(src.std()) or 1.0
            columns.append(np.round(src + rng.normal(0.0, 0.1 * sd, n), 4).tolist())
    names = [pf.name for pf in layout]
    return [replace(r, extra_fields=dict(zip(names, row))) for r, row in zip(records, zip(*columns))]


# ---------------------------------------------------------------------------
# driver, manifest, files
# ---------------------------------------------------------------------------


def generate_dataset(cfg: GenConfig) -> Dataset:
    cfg.validate()
    records = base_records(cfg)
    records = inject_disruptions(records, cfg.disruption_rate, cfg.seed)
    records = inject_multilingual(records, cfg.multilingual_rate, cfg.seed)
    records = inject_missing(records, cfg.missing_rate, cfg.seed)
    records = inject_outliers(records, cfg.outlier_rate, cfg.seed)
    records = apply_padding(records, cfg.field_count, cfg.seed)
    return Dataset(records, cfg, compute_manifest(records, cfg))


def compute_manifest(records: Sequence[TransactionRecord], cfg: GenConfig) -> dict[str, Any]:
    types = Counter(r.record_type for r in records)
    dis = Counter(r.truth_disruption_type for r in records)
    lang = Counter(r.language for r in records)
    return {
        "schema_version": SCHEMA_VERSION,
        "n_records": len(records),
        "record_type": {t: types.get(t, 0) for t in RECORD_TYPES},
        "disruption_type": {t: dis.get(t, 0) for t in DISRUPTION_TYPES},
        "disrupted": sum(r.truth_disrupted for r in records),
        "language": {t: lang.get(t, 0) for t in LANGUAGES},
        "missing_priority": sum(r.priority is None for r in records),
        "field_count": cfg.field_count,
        "config": asdict(cfg),
    }


def record_to_dict(r: TransactionRecord) -> dict[str, Any]:
    return {
        "record_id": r.record_id,
        "record_type": r.record_type,
        "task_id": str(r.task_id),
        "timestamp": r.timestamp,
        "priority": r.priority,
        "location": r.location,
        "quantity": r.quantity,
        "planned_minutes": r.planned_minutes,
        "deadline": r.deadline,
        "language": r.language,
        "status_label": r.status_label,
        "equipment": r.equipment,
        "equipment_down": list(r.equipment_down),
        "arrival_burst": r.arrival_burst,
        "extra_fields": r.extra_fields,
        "truth": {"disrupted": r.truth_disrupted, "disruption_type": r.truth_disruption_type},
    }


def record_from_dict(d: dict[str, Any]) -> TransactionRecord:
    truth = d.get("truth", {})
    return TransactionRecord(
        record_id=int(d["record_id"]),
        record_type=d["record_type"],
        task_id=TaskId(d["task_id"]),
        timestamp=int(d["timestamp"]),
        priority=d["priority"],
        location=d["location"],
        quantity=int(d["quantity"]),
        planned_minutes=float(d["planned_minutes"]),
        deadline=int(d["deadline"]),
        language=d["language"],
        status_label=d["status_label"],
        equipment=d["equipment"],
        equipment_down=tuple(bool(x) for x in d["equipment_down"]),
        arrival_burst=int(d["arrival_burst"]),
        extra_fields=dict(d.get("extra_fields", {})),
        truth_disrupted=bool(truth.get("disrupted", False)),
        truth_disruption_type=truth.get("disruption_type", "None"),
    )


def dumps_record(r: TransactionRecord) -> str:
    return json.dumps(record_to_dict(r), ensure_ascii=False, separators=(",", ":"))


def manifest_path(path: Path | str) -> Path:
    path = Path(path)
    name = path.name[: -len(".jsonl")] if path.name.endswith(".jsonl") else path.stem
    return path.with_name(f"{name}.manifest.json")


def write_dataset(ds: Dataset, path: Path | str) -> tuple[Path, Path]:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in ds.records:
            fh.write(dumps_record(r))
            fh.write("\n")
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(ds.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, mpath


def read_records(path: Path | str) -> list[TransactionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_dict(json.loads(line)) for line in fh if line.strip()]


def read_dataset(path: Path | str) -> Dataset:
    records = read_records(path)
    manifest = json.loads(manifest_path(path).read_text(encoding="utf-8"))
    known = {f.name for f in fields(GenConfig)}
    cfg = GenConfig(**{k: v for k, v in manifest.get("config", {}).items() if k in known})
    return Dataset(records, cfg, manifest)


def disrupted_indices(records: Iterable[TransactionRecord]) -> list[int]:
    return [i for i, r in enumerate(records) if r.truth_disrupted]
