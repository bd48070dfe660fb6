"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment. Precedence, highest first: command
line flag, the ORCH_SEED environment variable (seed only), the config file,
the built-in default. Unknown keys and bad values raise ConfigError naming
the key before any stage does work.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from .baselines import ForestConfig, RulePolicyConfig
from .core import DomainError
from .datagen import CORE_FIELD_COUNT, MAX_FIELD_COUNT, GenConfig
from .dqn import Hyperparams
from .sim import ScenarioParams

SEED_ENV = "ORCH_SEED"


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, bool, str, ints
    default: Any
    help: str
    groups: tuple[str, ...]


_DQN = Hyperparams()
_GEN = GenConfig()
_FOREST = ForestConfig()
_SIM = ScenarioParams()

KEYS: tuple[Key, ...] = (
    Key("seed", "int", 0, "master seed for every stage", ("common",)),
    Key("n_records", "int", _GEN.n_records, "number of transactions to generate", ("data",)),
    Key("disruption_rate", "float", _GEN.disruption_rate, "share of disrupted records", ("data",)),
    Key("multilingual_rate", "float", _GEN.multilingual_rate, "share of records with Spanish labels", ("data",)),
    Key("missing_rate", "float", _GEN.missing_rate, "share of records with a missing priority", ("data",)),
    Key("outlier_rate", "float", _GEN.outlier_rate, "share of Order records with outlier quantities", ("data",)),
    Key("field_count", "int", _GEN.field_count, "raw schema width including padding fields", ("data",)),
    Key("normalize_language", "bool", True, "map Spanish tokens to English with the lexicon", ("prep",)),
    Key("r_threshold", "float", 0.8, "absolute Pearson r above which a column is pruned", ("prep",)),
    Key("max_features", "int", 100, "feature columns kept after pruning", ("prep",)),
    Key("n_workers", "int", _SIM.n_workers, "workers in the simulated warehouse", ("sim",)),
    Key("shift_size", "int", _SIM.shift_size, "tasks per simulated shift (one episode)", ("sim",)),
    Key("learning_rate", "float", _DQN.learning_rate, "SGD step size", ("dqn",)),
    Key("gamma", "float", _DQN.gamma, "discount per time_unit of simulated minutes", ("dqn",)),
    Key("time_unit", "float", _DQN.time_unit, "simulated minutes per discount step", ("dqn",)),
    Key("epsilon_start", "float", _DQN.epsilon_start, "initial exploration rate", ("dqn",)),
    Key("epsilon_end", "float", _DQN.epsilon_end, "final exploration rate", ("dqn",)),
    Key("epsilon_decay_steps", "int", _DQN.epsilon_decay_steps, "steps of linear epsilon decay", ("dqn",)),
    Key("batch_size", "int", _DQN.batch_size, "replay minibatch size", ("dqn",)),
    Key("target_sync_every", "int", _DQN.target_sync_every, "steps between target network syncs", ("dqn",)),
    Key("train_steps", "int", _DQN.train_steps, "environment steps of DQN training", ("dqn",)),
    Key("hidden_layers", "int", _DQN.hidden_layers, "hidden layers in the Q-network", ("dqn",)),
    Key("hidden_width", "int", _DQN.hidden_width, "units per hidden layer", ("dqn",)),
    Key("replay_capacity", "int", _DQN.replay_capacity, "replay ring capacity", ("dqn",)),
    Key("grid_hidden_widths", "ints", (), "hidden widths to grid-search (empty: no search)", ("dqn",)),
    Key("grid_learning_rates", "floats", (), "learning rates to grid-search (empty: the configured one)", ("dqn",)),
    Key("grid_train_steps", "int", 20000, "training steps per fold during grid search", ("dqn",)),
    Key("forest_trees", "int", _FOREST.n_trees, "trees in the random forest", ("forest",)),
    Key("forest_max_depth", "int", _FOREST.max_depth, "maximum tree depth", ("forest",)),
    Key("forest_min_samples", "int", _FOREST.min_samples_split, "minimum samples to split a node", ("forest",)),
    Key("surge_threshold", "int", RulePolicyConfig().surge_threshold, "rule policy: arrivals that trigger Expedite", ("rule",)),
    Key("sweep_field_counts", "ints", (100, 300, 500, 700, 900), "field counts visited by the schema sweep", ("sweep",)),
    Key("sweep_n_records", "int", 3000, "records generated per sweep point", ("sweep",)),
)
KEY_BY_NAME = {k.name: k for k in KEYS}


def keys_for(groups: tuple[str, ...]) -> list[Key]:
    return [k for k in KEYS if set(k.groups) & set(groups)]


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: Key, text: Any) -> Any:
    if not isinstance(text, str):
        return text
    try:
        if key.kind == "int":
            return int(text)
        if key.kind == "float":
            return float(text)
        if key.kind == "bool":
            return _parse_bool(text)
        if key.kind == "ints":
            return tuple(int(x) for x in text.split(",") if x.strip())
        if key.kind == "floats":
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError as exc:
        raise ConfigError(key.name, f"cannot parse {text!r} as {key.kind}") from exc


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def read_config_file(path: Path | str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", "expected key = value")
            name, value = (part.strip() for part in line.split("=", 1))
            if name not in KEY_BY_NAME:
                raise ConfigError(name, "unknown configuration key")
            if name in out:
                raise ConfigError(name, "key given twice")
            out[name] = value
    return out


class RunConfig:
    """Merged, validated configuration; keys read as attributes."""

    def __init__(self, values: Mapping[str, Any], sources: Optional[Mapping[str, str]] = None):
        self._values = dict(values)
        self.sources = dict(sources or {})

    def __getattr__(self, name: str) -> Any:
        try:
            return self.__dict__["_values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def replace(self, **changes: Any) -> "RunConfig":
        values = dict(self._values)
        for k, v in changes.items():
            if k not in KEY_BY_NAME:
                raise ConfigError(k, "unknown configuration key")
            values[k] = v
        cfg = RunConfig(values, self.sources)
        validate(cfg)
        return cfg

    def gen_config(self, **overrides: Any) -> GenConfig:
        base = dict(
            n_records=self.n_records,
            disruption_rate=self.disruption_rate,
            multilingual_rate=self.multilingual_rate,
            missing_rate=self.missing_rate,
            outlier_rate=self.outlier_rate,
            field_count=self.field_count,
            n_workers=self.n_workers,
            seed=self.seed,
        )
        base.update(overrides)
        return GenConfig(**base)

    def scenario_params(self, p99_planned: float) -> ScenarioParams:
        return ScenarioParams(
            n_workers=self.n_workers,
            shift_size=self.shift_size,
            scenario_seed=self.seed,
            p99_planned=p99_planned,
        )

    def hyperparams(self, **overrides: Any) -> Hyperparams:
        base = dict(
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            time_unit=self.time_unit,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            epsilon_decay_steps=self.epsilon_decay_steps,
            batch_size=self.batch_size,
            target_sync_every=self.target_sync_every,
            train_steps=self.train_steps,
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            replay_capacity=self.replay_capacity,
        )
        base.update(overrides)
        return Hyperparams(**base)

    def forest_config(self) -> ForestConfig:
        return ForestConfig(self.forest_trees, self.forest_max_depth, self.forest_min_samples)

    def rule_config(self) -> RulePolicyConfig:
        return RulePolicyConfig(surge_threshold=self.surge_threshold)


def _require(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(key, message)


def validate(cfg: RunConfig) -> None:
    v = cfg.as_dict()
    _require(0 <= v["seed"] < 2**64, "seed", "must be an unsigned 64-bit integer")
    _require(v["n_records"] >= 1, "n_records", "must be positive")
    for name in ("disruption_rate", "multilingual_rate", "missing_rate", "outlier_rate"):
        _require(0.0 <= v[name] <= 1.0, name, f"must be in [0, 1], got {v[name]}")
    lo, hi = CORE_FIELD_COUNT, MAX_FIELD_COUNT
    _require(lo <= v["field_count"] <= hi, "field_count", f"must be in [{lo}, {hi}]")
    _require(0.0 < v["r_threshold"] <= 1.0, "r_threshold", "must be in (0, 1]")
    _require(v["max_features"] >= 1, "max_features", "must be positive")
    _require(v["n_workers"] >= 1, "n_workers", "must be positive")
    _require(v["shift_size"] >= 1, "shift_size", "must be positive")
    _require(v["learning_rate"] > 0, "learning_rate", "must be positive")
    _require(0.0 <= v["gamma"] < 1.0, "gamma", "must be in [0, 1)")
    _require(v["time_unit"] > 0, "time_unit", "must be positive")
    for name in ("epsilon_start", "epsilon_end"):
        _require(0.0 <= v[name] <= 1.0, name, "must be in [0, 1]")
    for name in ("epsilon_decay_steps", "train_steps", "grid_train_steps"):
        _require(v[name] >= 0, name, "must be non-negative")
    for name in ("batch_size", "target_sync_every", "hidden_layers", "hidden_width", "replay_capacity"):
        _require(v[name] >= 1, name, "must be positive")
    _require(all(w >= 1 for w in v["grid_hidden_widths"]), "grid_hidden_widths", "widths must be positive")
    _require(all(r > 0 for r in v["grid_learning_rates"]), "grid_learning_rates", "rates must be positive")
    _require(v["forest_trees"] >= 1, "forest_trees", "must be positive")
    _require(v["forest_max_depth"] >= 0, "forest_max_depth", "must be non-negative")
    _require(v["forest_min_samples"] >= 2, "forest_min_samples", "must be at least 2")
    _require(v["surge_threshold"] >= 1, "surge_threshold", "must be at least 1")
    _require(
        len(v["sweep_field_counts"]) > 0 and all(20 <= f <= hi for f in v["sweep_field_counts"]),
        "sweep_field_counts",
        f"must be a non-empty list within [20, {hi}]",
    )
    _require(v["sweep_n_records"] >= 10, "sweep_n_records", "must be at least 10")


def build_config(
    file_values: Optional[Mapping[str, str]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    sources: dict[str, str] = {}
    for key in KEYS:
        values[key.name] = key.default
        sources[key.name] = "default"
    for name, text in (file_values or {}).items():
        if name not in KEY_BY_NAME:
            raise ConfigError(name, "unknown configuration key")
        values[name] = parse_value(KEY_BY_NAME[name], text)
        sources[name] = "file"
    if env.get(SEED_ENV):
        values["seed"] = parse_value(KEY_BY_NAME["seed"], env[SEED_ENV])
        sources["seed"] = "env"
    for name, value in (flag_values or {}).items():
        if value is None:
            continue
        if name not in KEY_BY_NAME:
            raise ConfigError(name, "unknown configuration key")
        values[name] = parse_value(KEY_BY_NAME[name], value)
        sources[name] = "flag"
    cfg = RunConfig(values, sources)
    validate(cfg)
    return cfg


def render_config(cfg: RunConfig) -> str:
    """The merged configuration in the same flat format it is read from."""
    return "".join(f"{k.name} = {format_value(getattr(cfg, k.name))}\n" for k in KEYS)
