"""Command line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 IO or other failure, 2 configuration error,
3 missing input artifact, 4 schema or checkpoint version mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib.resources import files
from pathlib import Path
from typing import Optional, Sequence

from . import dqn, pipeline
from .baselines import FOREST_FORMAT, FOREST_VERSION, Forest, forest_from_dict, save_forest
from .config import KEYS, ConfigError, RunConfig, build_config, format_value, keys_for, read_config_file
from .core import DomainError
from .datagen import SCHEMA_VERSION, InvalidConfig, read_dataset, write_dataset
from .evaluation import (
    EvalResult,
    schema_sweep,
    write_heatmap_csv,
    write_metrics_csv,
    write_roc_csv,
    write_sweep_csv,
)
from .preprocess import SplitSpec, read_matrix, write_matrix

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_MISSING, EXIT_SCHEMA = 0, 1, 2, 3, 4

DATASET = "data/transactions.jsonl"
FEATURES = "features.csv"
SIDECAR = "features.schema.json"
SPLIT = "split.json"
DQN_CKPT = "models/dqn.json"
FOREST_CKPT = "models/forest.json"
TRAINING_LOG = "models/dqn_training.csv"
LOSS_LOG = "models/dqn_loss.csv"
GRID = "models/grid.csv"
RESULTS = "results"
SWEEP = "results/sweep.csv"
ABLATION = "results/ablation.csv"
REPORT = "report.txt"
REFERENCE_CONFIG = "reference-desk.config"

GROUPS = {
    "generate": ("common", "data"),
    "preprocess": ("common", "prep"),
    "train": ("common", "sim", "dqn", "forest"),
    "evaluate": ("common", "sim", "rule"),
    "sweep": ("common", "data", "prep", "sim", "dqn", "forest", "rule", "sweep"),
    "report": ("common",),
}
# short spellings kept alongside the long flag
ALIASES = {"n_records": ["--n"], "train_steps": ["--steps"]}


class MissingInput(Exception):
    pass


class SchemaMismatch(Exception):
    pass


# -- argument parsing --------------------------------------------------------


def _add_key_flags(p: argparse.ArgumentParser, groups: tuple[str, ...]) -> None:
    for key in keys_for(groups):
        flags = ["--" + key.name.replace("_", "-")] + ALIASES.get(key.name, [])
        p.add_argument(
            *flags,
            dest=key.name,
            default=None,
            metavar=key.kind.upper(),
            help=f"{key.help} (default: {format_value(key.default) or 'none'})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wareorch", description="Warehouse disruption scheduling benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write the synthetic transaction dataset",
        "preprocess": "build the feature table and the train/test split",
        "train": "train the DQN and/or the random forest",
        "evaluate": "run every policy on the test split and write metrics",
        "sweep": "rerun the pipeline across schema sizes",
        "report": "summarize metrics into a comparison table",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--workdir", default=".", help="directory all paths are relative to (default: .)")
        p.add_argument(
            "--config",
            default=None,
            help=f"key = value config file; '{REFERENCE_CONFIG}' falls back to the packaged copy (default: none)",
        )
        if name == "generate":
            p.add_argument("--out", default=DATASET, help=f"dataset path (default: {DATASET})")
        if name in ("train", "evaluate"):
            p.add_argument(
                "--policy", choices=("dqn", "forest", "all"), default="all", help="learner(s) to use (default: all)"
            )
        _add_key_flags(p, GROUPS[name])
    return parser


def _config_path(workdir: Path, name: str) -> Path:
    path = workdir / name
    if path.exists() or Path(name).name != REFERENCE_CONFIG:
        return path
    return Path(str(files("wareorch") / "data" / REFERENCE_CONFIG))


def load_config(args: argparse.Namespace, workdir: Path) -> RunConfig:
    file_values = {}
    if args.config:
        path = _config_path(workdir, args.config)
        if not path.exists():
            raise MissingInput(f"config file {path} not found")
        file_values = read_config_file(path)
    flags = {k.name: getattr(args, k.name, None) for k in KEYS}
    return build_config(file_values, flags)


# -- artifact helpers --------------------------------------------------------


def _need(workdir: Path, rel: str) -> Path:
    path = workdir / rel
    if not path.exists():
        raise MissingInput(f"missing input {rel} (run the upstream stage first)")
    return path


def _out(workdir: Path, rel: str) -> Path:
    path = workdir / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _check_version(found, expected: int, what: str) -> None:
    if found != expected:
        raise SchemaMismatch(f"{what} has schema version {found!r}, this build reads {expected}")


def _load_dataset(workdir: Path, rel: str = DATASET):
    path = _need(workdir, rel)
    _need(workdir, str(Path(rel).with_name(Path(rel).name.replace(".jsonl", ".manifest.json"))))
    ds = read_dataset(path)
    _check_version(ds.manifest.get("schema_version"), SCHEMA_VERSION, "dataset manifest")
    return ds


def _load_prepared(cfg: RunConfig, workdir: Path):
    """Dataset, feature table and split, all from the working directory."""
    ds = _load_dataset(workdir)
    matrix, side = read_matrix(_need(workdir, FEATURES), _need(workdir, SIDECAR))
    _check_version(side.get("schema_version"), SCHEMA_VERSION, "feature sidecar")
    spec = SplitSpec.from_dict(json.loads(_need(workdir, SPLIT).read_text(encoding="utf-8")))
    if matrix.row_count != len(ds.records) or matrix.record_ids != [r.record_id for r in ds.records]:
        raise SchemaMismatch("feature table rows do not match the dataset")
    pre = pipeline.preprocess(cfg, ds.records, normalize=bool(side["normalize_language"]))
    return ds, pipeline.prepare(cfg, ds.records, pre, spec, matrix)


def _load_checkpoint(workdir: Path, rel: str, fmt: str, version: int) -> dict:
    d = json.loads(_need(workdir, rel).read_text(encoding="utf-8"))
    if d.get("format") != fmt:
        raise SchemaMismatch(f"{rel} is not a {fmt} checkpoint")
    _check_version(d.get("version"), version, rel)
    return d


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- subcommands -------------------------------------------------------------


def cmd_generate(cfg: RunConfig, args, workdir: Path) -> None:
    ds = pipeline.generate(cfg)
    write_dataset(ds, _out(workdir, args.out))


def cmd_preprocess(cfg: RunConfig, args, workdir: Path) -> None:
    ds = _load_dataset(workdir)
    pre = pipeline.preprocess(cfg, ds.records)
    write_matrix(pre, _out(workdir, FEATURES), _out(workdir, SIDECAR))
    spec = pipeline.split([r.truth_disrupted for r in ds.records], seed=cfg.seed)
    _write_json(_out(workdir, SPLIT), spec.to_dict())


def _write_training_log(workdir: Path, log: dqn.TrainingLog, loss_every: int = 100) -> None:
    with open(_out(workdir, TRAINING_LOG), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "reward", "steps"])
        for i, (r, s) in enumerate(zip(log.episode_rewards, log.episode_steps)):
            w.writerow([i, _fmt(r), s])
    with open(_out(workdir, LOSS_LOG), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, loss in enumerate(log.losses):
            w.writerow([(i + 1) * loss_every, _fmt(loss)])


def _write_grid(workdir: Path, rows: Sequence[dqn.GridRow]) -> None:
    k = max((len(r.fold_scores) for r in rows), default=0)
    with open(_out(workdir, GRID), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hidden_width", "learning_rate", *[f"fold_{i}" for i in range(k)], "mean"])
        for r in rows:
            w.writerow([r.hp.hidden_width, r.hp.learning_rate, *[_fmt(s) for s in r.fold_scores], _fmt(r.mean)])


def cmd_train(cfg: RunConfig, args, workdir: Path) -> None:
    _, prep = _load_prepared(cfg, workdir)
    if args.policy in ("dqn", "all"):
        hp = cfg.hyperparams()
        if cfg.grid_hidden_widths or cfg.grid_learning_rates:
            hp, rows = pipeline.run_grid(prep)
            _write_grid(workdir, rows)
        net, log = pipeline.train_dqn_model(prep, hp)
        meta = {"seed": cfg.seed, "hyperparams": dqn.hyperparams_to_dict(hp), "steps": hp.train_steps}
        dqn.save_network(net, _out(workdir, DQN_CKPT), meta)
        _write_training_log(workdir, log)
    if args.policy in ("forest", "all"):
        save_forest(pipeline.train_forest_model(prep), _out(workdir, FOREST_CKPT))


def _write_episodes(path: Path, results: dict[str, EvalResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name, r in results.items():
            for o in r.outcomes:
                row = {
                    "policy": name,
                    "record_id": o.record_id,
                    "task_id": o.task_id,
                    "record_type": o.record_type,
                    "arrival": o.arrival,
                    "deadline": o.deadline,
                    "completed_at": o.completed_at,
                    "deadline_met": o.deadline_met,
                    "remediated": o.remediated,
                    "truth_disrupted": o.truth_disrupted,
                    "truncated": o.truncated,
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_ablation(path: Path, ab: dict[str, EvalResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["normalization", "recall", "accuracy_recovery"])
        for label in ("on", "off"):
            w.writerow([label, _fmt(ab[label].metrics.recall), _fmt(ab[label].recovery_accuracy)])


def cmd_evaluate(cfg: RunConfig, args, workdir: Path) -> None:
    ds, prep = _load_prepared(cfg, workdir)
    net: Optional[dqn.QNetwork] = None
    forest: Optional[Forest] = None
    if args.policy in ("dqn", "all"):
        net = dqn.network_from_dict(_load_checkpoint(workdir, DQN_CKPT, dqn.CHECKPOINT_FORMAT, dqn.CHECKPOINT_VERSION))
    if args.policy in ("forest", "all"):
        forest = forest_from_dict(_load_checkpoint(workdir, FOREST_CKPT, FOREST_FORMAT, FOREST_VERSION))
    results = pipeline.evaluate_all(prep, pipeline.policies(prep, net, forest))
    write_metrics_csv(_out(workdir, f"{RESULTS}/metrics.csv"), list(results.values()), results["fifo"])
    for name, r in results.items():
        write_roc_csv(_out(workdir, f"{RESULTS}/roc_{name}.csv"), r)
    lead = "dqn" if "dqn" in results else "forest" if "forest" in results else "rule"
    write_heatmap_csv(_out(workdir, f"{RESULTS}/heatmap.csv"), results[lead])
    _write_episodes(_out(workdir, f"{RESULTS}/episodes.jsonl"), results)
    if net is not None:
        _write_ablation(_out(workdir, ABLATION), pipeline.multilingual_ablation(cfg, net, ds.config))


def cmd_sweep(cfg: RunConfig, args, workdir: Path) -> None:
    rows = schema_sweep(cfg.sweep_field_counts, pipeline.sweep_runner(cfg), cfg.seed)
    write_sweep_csv(_out(workdir, SWEEP), rows)


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_report(metrics: list[dict], sweep: Optional[list[dict]], ablation: Optional[list[dict]]) -> str:
    def num(s: str, pct: bool = False) -> str:
        if s == "":
            return "n/a"
        return f"{float(s):.1f}%" if pct else f"{float(s):.3f}"

    cols = [
        ("Policy", "policy", None),
        ("Recovery", "accuracy_recovery", False),
        ("Accuracy", "accuracy_cls", False),
        ("Precision", "precision", False),
        ("Recall", "recall", False),
        ("F1", "f1", False),
        ("AUC", "auc", False),
        ("Mean min", "mean_completion", False),
        ("Time red.", "time_reduction_pct", True),
    ]
    table = [[h for h, _, _ in cols]]
    for row in metrics:
        table.append([row[k] if pct is None else num(row[k], pct) for _, k, pct in cols])
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    lines = ["Policy comparison on the test split", ""]
    for j, r in enumerate(table):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines += ["", "Recovery: disrupted tasks remediated that still met their deadline, over all disrupted tasks."]
    lines.append("Time reduction is relative to the FIFO scheduler with no remediation.")
    if sweep:
        lines += ["", "Recovery accuracy by raw schema width", ""]
        policies = sorted({r["policy"] for r in sweep})
        counts = sorted({int(r["field_count"]) for r in sweep})
        acc = {(int(r["field_count"]), r["policy"]): r["accuracy"] for r in sweep}
        lines.append("fields  " + "  ".join(p.rjust(7) for p in policies))
        for fc in counts:
            lines.append(f"{fc:>6}  " + "  ".join(num(acc.get((fc, p), "")).rjust(7) for p in policies))
    if ablation:
        lines += ["", "Lexicon normalization on a 20% Spanish variant (DQN)", ""]
        for r in ablation:
            lines.append(f"normalization {r['normalization']:>3}: recall {num(r['recall'])}, recovery {num(r['accuracy_recovery'])}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, args, workdir: Path) -> None:
    metrics = _read_csv(_need(workdir, f"{RESULTS}/metrics.csv"))
    sweep = _read_csv(workdir / SWEEP) if (workdir / SWEEP).exists() else None
    ablation = _read_csv(workdir / ABLATION) if (workdir / ABLATION).exists() else None
    text = render_report(metrics, sweep, ablation)
    _out(workdir, REPORT).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    workdir = Path(args.workdir)
    try:
        cfg = load_config(args, workdir)
        COMMANDS[args.command](cfg, args, workdir)
    except (ConfigError, InvalidConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OSError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
