import pytest

from wareorch.config import KEY_BY_NAME, ConfigError, build_config, read_config_file, render_config


def write(tmp_path, text):
    p = tmp_path / "run.config"
    p.write_text(text)
    return p


def test_defaults_without_sources():
    cfg = build_config(env={})
    assert cfg.seed == KEY_BY_NAME["seed"].default
    assert set(cfg.sources.values()) == {"default"}


def test_precedence_flag_env_file(tmp_path):
    file_values = read_config_file(write(tmp_path, "seed = 3\nn_records = 50\n"))
    assert build_config(file_values, env={}).seed == 3
    assert build_config(file_values, env={"ORCH_SEED": "9"}).seed == 9
    cfg = build_config(file_values, {"seed": 11}, env={"ORCH_SEED": "9"})
    assert cfg.seed == 11 and cfg.sources["seed"] == "flag"
    assert cfg.n_records == 50 and cfg.sources["n_records"] == "file"


def test_unset_flag_falls_through():
    cfg = build_config({"gamma": "0.5"}, {"gamma": None}, env={})
    assert cfg.gamma == 0.5


def test_comments_and_blank_lines(tmp_path):
    p = write(tmp_path, "# header\n\nshift_size = 25   # per shift\n  gamma=0.3\n")
    assert read_config_file(p) == {"shift_size": "25", "gamma": "0.3"}


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError) as err:
        read_config_file(write(tmp_path, "n_recrods = 5\n"))
    assert err.value.key == "n_recrods"


def test_duplicate_key(tmp_path):
    with pytest.raises(ConfigError) as err:
        read_config_file(write(tmp_path, "seed = 1\nseed = 2\n"))
    assert err.value.key == "seed"


def test_missing_equals(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(write(tmp_path, "seed 1\n"))


@pytest.mark.parametrize(
    "key, value",
    [
        ("disruption_rate", "1.5"),
        ("gamma", "1.0"),
        ("n_workers", "0"),
        ("field_count", "5000"),
        ("n_records", "ten"),
        ("normalize_language", "maybe"),
        ("sweep_field_counts", "10,100"),
    ],
)
def test_bad_value_names_key(key, value):
    with pytest.raises(ConfigError) as err:
        build_config({key: value}, env={})
    assert err.value.key == key
    assert key in str(err.value)


def test_bad_env_seed():
    with pytest.raises(ConfigError) as err:
        build_config(env={"ORCH_SEED": "-1"})
    assert err.value.key == "seed"


def test_list_values():
    cfg = build_config({"sweep_field_counts": "900, 100", "grid_learning_rates": "0.01,0.001"}, env={})
    assert cfg.sweep_field_counts == (900, 100)
    assert cfg.grid_learning_rates == (0.01, 0.001)


def test_render_round_trip(tmp_path):
    cfg = build_config({"gamma": "0.25", "normalize_language": "false"}, env={})
    again = build_config(read_config_file(write(tmp_path, render_config(cfg))), env={})
    assert again.as_dict() == cfg.as_dict()


def test_replace_validates():
    cfg = build_config(env={})
    assert cfg.replace(shift_size=7).shift_size == 7
    with pytest.raises(ConfigError):
        cfg.replace(shift_size=0)
    with pytest.raises(ConfigError):
        cfg.replace(nope=1)


def test_builders_carry_values():
    cfg = build_config({"seed": "5", "hidden_width": "16", "forest_trees": "3", "n_workers": "4"}, env={})
    assert cfg.gen_config().seed == 5
    assert cfg.hyperparams().hidden_width == 16
    assert cfg.forest_config().n_trees == 3
    assert cfg.scenario_params(30.0).n_workers == 4
