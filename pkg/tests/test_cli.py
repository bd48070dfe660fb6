import hashlib
import json
import shutil

import numpy as np
import pytest

from wareorch import dqn
from wareorch.cli import main
from wareorch.preprocess import STATE_DIM

SMALL = ["--seed", "5"]
TRAIN_SMALL = ["--steps", "300", "--forest-trees", "5", "--hidden-width", "16", "--hidden-layers", "2"]


def run(workdir, *argv):
    return main([argv[0], "--workdir", str(workdir), *argv[1:]])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run(d, "generate", *SMALL, "--n", "400") == 0
    assert run(d, "preprocess", *SMALL) == 0
    assert run(d, "train", *SMALL, *TRAIN_SMALL, "--shift-size", "20") == 0
    assert run(d, "evaluate", *SMALL, "--shift-size", "20") == 0
    assert run(d, "report") == 0
    return d


def test_generate_line_count(tmp_path):
    assert run(tmp_path, "generate", "--n", "100", "--seed", "1") == 0
    lines = (tmp_path / "data/transactions.jsonl").read_text().splitlines()
    assert len(lines) == 100
    assert (tmp_path / "data/transactions.manifest.json").exists()


def test_bad_rate_is_config_error(tmp_path, capsys):
    assert run(tmp_path, "generate", "--disruption-rate", "1.5") == 2
    assert "disruption_rate" in capsys.readouterr().err
    assert not (tmp_path / "data/transactions.jsonl").exists()


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "bad.config").write_text("seed = 1\nwarp_factor = 9\n")
    assert run(tmp_path, "generate", "--config", "bad.config") == 2
    assert "warp_factor" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "generate", "--config", "nowhere.config") == 3


def test_evaluate_without_inputs(tmp_path):
    assert run(tmp_path, "evaluate") == 3


def test_evaluate_without_checkpoint(pipeline_dir, tmp_path):
    for name in ("data", "features.csv", "features.schema.json", "split.json"):
        src = pipeline_dir / name
        (shutil.copytree if src.is_dir() else shutil.copy)(src, tmp_path / name)
    assert run(tmp_path, "evaluate", "--policy", "dqn") == 3


def test_zero_steps_gives_initial_network(pipeline_dir, tmp_path):
    for name in ("data", "features.csv", "features.schema.json", "split.json"):
        src = pipeline_dir / name
        (shutil.copytree if src.is_dir() else shutil.copy)(src, tmp_path / name)
    assert run(tmp_path, "train", "--seed", "5", "--policy", "dqn", "--steps", "0", "--n-workers", "4") == 0
    net, meta = dqn.load_network(tmp_path / "models/dqn.json")
    hp = dqn.Hyperparams()
    ref = dqn.init_network(STATE_DIM, 4 + 3, 5, hp.hidden_layers, hp.hidden_width, hp.use_embedding)
    assert net.layer_dims == ref.layer_dims
    for a, b in zip(net.weights + net.biases, ref.weights + ref.biases):
        np.testing.assert_array_equal(a, b)
    assert meta["steps"] == 0 and meta["seed"] == 5
    assert not (tmp_path / "models/forest.json").exists()


def test_schema_version_mismatch(pipeline_dir, tmp_path):
    for name in ("data", "features.csv", "features.schema.json", "split.json"):
        src = pipeline_dir / name
        (shutil.copytree if src.is_dir() else shutil.copy)(src, tmp_path / name)
    side = json.loads((tmp_path / "features.schema.json").read_text())
    side["schema_version"] = 999
    (tmp_path / "features.schema.json").write_text(json.dumps(side))
    assert run(tmp_path, "train", "--policy", "forest") == 4


def test_wrong_checkpoint_format(pipeline_dir, tmp_path):
    shutil.copytree(pipeline_dir, tmp_path / "w")
    shutil.copy(tmp_path / "w/models/forest.json", tmp_path / "w/models/dqn.json")
    assert run(tmp_path / "w", "evaluate", "--policy", "dqn") == 4


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "--disruption-rate" in out and "(default: 0.05)" in out
    assert "--n " in out or "--n N" in out or "--n INT" in out


def test_end_to_end_outputs(pipeline_dir):
    for rel in ("models/dqn.json", "models/forest.json", "models/dqn_training.csv", "results/metrics.csv",
                "results/heatmap.csv", "results/roc_dqn.csv", "results/ablation.csv", "report.txt"):
        assert (pipeline_dir / rel).exists(), rel
    metrics = (pipeline_dir / "results/metrics.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in metrics[1:]] == ["fifo", "rule", "forest", "dqn"]
    report = (pipeline_dir / "report.txt").read_text()
    assert "Policy comparison" in report and "dqn" in report


def test_reruns_byte_identical(pipeline_dir, tmp_path):
    d = tmp_path / "again"
    d.mkdir()
    assert run(d, "generate", *SMALL, "--n", "400") == 0
    assert run(d, "preprocess", *SMALL) == 0
    assert run(d, "train", *SMALL, *TRAIN_SMALL, "--shift-size", "20") == 0
    for rel in ("data/transactions.jsonl", "features.csv", "split.json", "models/dqn.json", "models/forest.json"):
        assert digest(d / rel) == digest(pipeline_dir / rel), rel


def test_env_seed_used(tmp_path, monkeypatch):
    monkeypatch.setenv("ORCH_SEED", "5")
    assert run(tmp_path, "generate", "--n", "50", "--out", "a.jsonl") == 0
    monkeypatch.delenv("ORCH_SEED")
    assert run(tmp_path, "generate", "--n", "50", "--seed", "5", "--out", "b.jsonl") == 0
    assert digest(tmp_path / "a.jsonl") == digest(tmp_path / "b.jsonl")


def test_packaged_reference_config(tmp_path):
    assert run(tmp_path, "generate", "--config", "reference-desk.config", "--n", "30") == 0
    manifest = json.loads((tmp_path / "data/transactions.manifest.json").read_text())
    assert manifest["config"]["field_count"] == 120
