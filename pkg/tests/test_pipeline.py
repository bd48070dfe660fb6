import numpy as np
import pytest

from wareorch import pipeline as P
from wareorch.config import build_config


@pytest.fixture(scope="module")
def prep(small_cfg):
    return P.prepare(small_cfg.replace(n_records=400, shift_size=20))


def test_split_covers_dataset(prep):
    train, test = set(prep.split.train_indices), set(prep.split.test_indices)
    assert not train & test
    assert train | test == set(range(len(prep.records)))
    assert sum(len(e) for e in prep.train_shifts) == len(train)
    assert sum(len(e) for e in prep.test_shifts) == len(test)
    assert all(len(e) <= 20 for e in prep.test_shifts)


def test_env_factory_visits_each_shift_once_per_pass(prep):
    make = P.env_factory(prep.train_shifts, prep.params, seed=1)
    n = len(prep.train_shifts)
    for epoch in range(2):
        seen = [make(epoch * n + k).tasks[0].obs.record_id for k in range(n)]
        assert len(set(seen)) == n


def test_train_episode_seeds_distinct():
    seeds = {P.train_episode_seed(7, k) for k in range(1000)}
    assert len(seeds) == 1000


def test_grid_points_default_and_product(small_cfg):
    assert len(P.grid_points(small_cfg)) == 1
    cfg = small_cfg.replace(grid_hidden_widths=(16, 32), grid_learning_rates=(0.01, 0.001, 0.003))
    pts = P.grid_points(cfg)
    assert len(pts) == 6
    assert {(p.hidden_width, p.learning_rate) for p in pts} == {(w, lr) for w in (16, 32) for lr in (0.01, 0.001, 0.003)}
    assert all(p.train_steps == cfg.grid_train_steps for p in pts)


def test_dqn_inputs_ignore_padding_fields():
    base = build_config({"n_records": "300", "seed": "4"}, env={})
    a = P.prepare(base.replace(field_count=40))
    b = P.prepare(base.replace(field_count=300))
    hp = base.hyperparams()
    assert P._dqn_inputs_digest(a, hp) == P._dqn_inputs_digest(b, hp)
    assert P._dqn_inputs_digest(a, hp) != P._dqn_inputs_digest(a, base.hyperparams(hidden_width=8))


def test_forest_rows_follow_split(prep):
    forest = P.train_forest_model(prep)
    sched = P.forest_scheduler(forest, prep)
    rid = prep.records[prep.split.test_indices[0]].record_id
    flag, frac = sched.inner.predict(rid)
    assert 0.0 <= frac <= 1.0 and isinstance(bool(flag), bool)


def test_tiny_end_to_end(prep):
    small = P.Prepared(**{**prep.__dict__, "cfg": prep.cfg.replace(train_steps=200, forest_trees=3,
                                                                     hidden_layers=1, hidden_width=8)})
    net, forest, results = P.fit_and_evaluate(small)
    assert list(results) == ["fifo", "rule", "forest", "dqn"]
    n = sum(len(e) for e in small.test_shifts)
    assert all(r.n_tasks == n for r in results.values())
    again = P.evaluate_all(small, P.policies(small, net, forest))
    for name in results:
        assert again[name].outcomes == results[name].outcomes
        np.testing.assert_array_equal(again[name].scores, results[name].scores)


def test_run_grid_scores_every_fold(prep):
    cfg = prep.cfg.replace(
        grid_hidden_widths=(8,), grid_learning_rates=(0.01, 0.003), grid_train_steps=50,
        hidden_layers=1, train_steps=123,
    )
    small = P.Prepared(**{**prep.__dict__, "cfg": cfg})
    best, rows = P.run_grid(small)
    assert [(r.hp.hidden_width, r.hp.learning_rate) for r in rows] == [(8, 0.01), (8, 0.003)]
    assert all(len(r.fold_scores) == len(prep.split.folds) for r in rows)
    assert best.train_steps == 123 and best.hidden_width == 8
