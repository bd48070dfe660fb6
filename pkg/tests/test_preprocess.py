import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wareorch.core import TaskId
from wareorch.datagen import GenConfig, generate_dataset
from wareorch.preprocess import (
    SPANS,
    STATE_DIM,
    AllValuesMissing,
    EncodingContext,
    FeatureMatrix,
    MissingPriority,
    NonPositiveActual,
    UnsortedInput,
    cap_outliers,
    efficiency_score,
    encode_state,
    impute_mode,
    nearest_rank,
    normalize_language,
    pearson,
    preprocess_records,
    prune_correlated,
    read_matrix,
    redact,
    split,
    temporal_features,
    write_matrix,
)

from conftest import make_record
from oracles import pearson_oracle, run_oracle


def test_impute_examples():
    assert impute_mode(["High", "High", "Low", None]) == ["High", "High", "Low", "High"]
    assert impute_mode(["A", "B", None]) == ["A", "B", "A"]
    with pytest.raises(AllValuesMissing):
        impute_mode([None, None])


def test_cap_examples():
    col = [1.0] * 99 + [1000.0]
    assert cap_outliers(col, 0.99).tolist() == [1.0] * 100
    assert cap_outliers([3.0] * 7).tolist() == [3.0] * 7
    assert cap_outliers([42.0]).tolist() == [42.0]
    assert nearest_rank(list(range(1, 101)), 0.07) == 7.0


def test_prune_examples():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=1000)
    b = rng.uniform(size=1000)
    names = ["a", "a_copy", "b", "const"]
    cols = {"a": a, "a_copy": a.copy(), "b": b, "const": np.full(1000, 3.0)}
    m = FeatureMatrix(names, cols, {n: "numeric" for n in names}, 1000)
    kept, removed = prune_correlated(m)
    assert removed == ["a_copy"]
    assert kept.column_names == ["a", "b", "const"]
    assert abs(pearson_oracle(a.tolist(), b.tolist())) <= 0.8


@pytest.mark.parametrize("name", ["mode", "cap", "prune"])
def test_matches_bruteforce_oracle(name):
    assert run_oracle(name, 500) == 0


@settings(max_examples=200)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20), st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
def test_pearson_close_to_oracle(x, y):
    n = min(len(x), len(y))
    r = pearson(x[:n], y[:n])
    assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12
    assert r == pytest.approx(pearson_oracle(x[:n], y[:n]), abs=1e-9)


def test_efficiency_score():
    r = make_record(planned_minutes=30.0)
    assert efficiency_score(r, 30) == 1.0
    assert efficiency_score(r, 60) == 0.5
    assert efficiency_score(r, 10) == 2.0
    with pytest.raises(NonPositiveActual):
        efficiency_score(r, 0)


def test_temporal_features():
    assert temporal_features([0, 5, 7]) == ([0, 5, 2], [1, 2, 3])
    assert temporal_features([12]) == ([0], [1])
    with pytest.raises(UnsortedInput):
        temporal_features([5, 3])


@given(st.lists(st.integers(0, 60), min_size=1, max_size=40))
def test_rolling_count_bruteforce(gaps):
    ts = list(np.cumsum(gaps))
    _, counts = temporal_features(ts)
    for i, t in enumerate(ts):
        assert counts[i] == sum(1 for j in range(i + 1) if t - ts[j] < 10)


def test_lexicon_examples():
    assert normalize_language("urgente") == "urgent"
    assert normalize_language("urgent") == "urgent"
    assert normalize_language("zzz") == "unknown"


def _ctx(**kw):
    base = dict(equipment_flags=(False, True, False), queue_length=4, arrivals_last_10min=2, minutes_to_deadline=60.0, p99_planned=40.0)
    base.update(kw)
    return EncodingContext(**base)


def _obs(**kw):
    r = make_record(**{k: v for k, v in kw.items() if k != "priority"})
    return redact(r, kw.get("priority", "Normal"), "open")


def test_encode_state_spans():
    emb = np.zeros((64, 8))
    s = encode_state(_obs(priority="Urgent"), _ctx(), emb)
    assert s.values.shape == (STATE_DIM,)
    assert s.span("priority_onehot").tolist() == [0, 0, 0, 1]
    o = redact(make_record(record_type="Order", equipment="conveyor"), "Low", "open")
    assert encode_state(o, _ctx(), emb).span("record_type_onehot").tolist() == [0, 0, 1]
    assert encode_state(_obs(planned_minutes=40.0), _ctx(), emb).span("processing_time_norm").tolist() == [1.0]
    assert s.span("equipment_flags").tolist() == [0, 1, 0]


def test_encode_state_uses_embedding_row():
    emb = np.arange(64 * 8, dtype=float).reshape(64, 8)
    tid = TaskId.from_int(130)
    s = encode_state(redact(make_record(task_id=tid), "Low", "open"), _ctx(), emb)
    assert s.bucket == 130 % 64
    assert s.span("task_embedding").tolist() == emb[130 % 64].tolist()


def test_encode_requires_imputed_priority():
    with pytest.raises(MissingPriority):
        encode_state(redact(make_record(), None, "open"), _ctx(), np.zeros((64, 8)))


def test_split_sizes_and_determinism():
    labels = [i % 20 == 0 for i in range(300_000)]
    sp = split(labels, seed=1)
    assert len(sp.train_indices) == 240_000 and len(sp.test_indices) == 60_000
    small = split([False] * 10, k=5, seed=3)
    sizes = [len(f) for f in small.folds]
    assert all(1 <= s <= 2 for s in sizes)
    assert sorted(i for f in small.folds for i in f) == list(small.train_indices)
    assert split(labels[:1000], seed=9) == split(labels[:1000], seed=9)


@given(st.lists(st.booleans(), min_size=5, max_size=200), st.integers(0, 1000))
def test_split_partitions(labels, seed):
    sp = split(labels, seed=seed)
    assert sorted(sp.train_indices + sp.test_indices) == list(range(len(labels)))
    assert set(sp.train_indices).isdisjoint(sp.test_indices)
    assert sorted(i for f in sp.folds for i in f) == list(sp.train_indices)


@pytest.fixture(scope="module")
def pre_small():
    ds = generate_dataset(GenConfig(n_records=600, field_count=60, seed=4))
    return ds.records, preprocess_records(ds.records)


def test_preprocess_shapes(pre_small):
    records, pre = pre_small
    assert pre.matrix.row_count == len(records) == len(pre.observations)
    assert len(pre.matrix.column_names) <= 100
    assert all(o.priority is not None for o in pre.observations)
    assert sum(o.priority_imputed for o in pre.observations) == sum(r.priority is None for r in records)


def test_observations_carry_no_ground_truth(pre_small):
    _, pre = pre_small
    fields = set(type(pre.observations[0]).__dataclass_fields__)
    assert not any(f.startswith("truth") for f in fields)
    assert not any("truth" in c or "disrupt" in c for c in pre.matrix.column_names)


def test_matrix_roundtrip(tmp_path, pre_small):
    _, pre = pre_small
    write_matrix(pre, tmp_path / "f.csv", tmp_path / "f.json")
    m, side = read_matrix(tmp_path / "f.csv", tmp_path / "f.json")
    assert m.column_names == pre.matrix.column_names
    assert np.array_equal(m.to_array(), pre.matrix.to_array())
    assert side["state_dim"] == STATE_DIM
