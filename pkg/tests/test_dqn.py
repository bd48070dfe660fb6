import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wareorch import dqn
from wareorch.dqn import (
    DimensionMismatch,
    EmptyBatch,
    EmptyGrid,
    Experience,
    Hyperparams,
    QNetwork,
    ReplayBuffer,
)

from chain import CHAIN_HP, N_STATES, chain_q, train_chain, value_iteration
from gradcheck import gradient_check


def linear_net(biases):
    n = len(biases)
    return QNetwork([1, n], [np.zeros((1, n))], [np.array(biases, dtype=float)])


def test_zero_net_outputs_zero():
    net = QNetwork([3, 4, 2], [np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    assert dqn.forward(net, np.ones(3)).tolist() == [0.0, 0.0]


def test_hand_built_2_2_1():
    net = QNetwork([2, 2, 1], [np.eye(2), np.array([[1.0], [2.0]])], [np.array([0.0, -1.0]), np.array([0.5])])
    # h = relu([3, -0.5]) = [3, 0]; out = 3 + 0.5
    assert dqn.forward(net, np.array([3.0, 0.5])).tolist() == [3.5]


def test_dimension_mismatch():
    net = dqn.init_network(5, 3, seed=0, hidden_layers=1, hidden_width=4)
    with pytest.raises(DimensionMismatch):
        dqn.forward(net, np.zeros(4))
    with pytest.raises(DimensionMismatch):
        QNetwork([2, 3], [np.zeros((3, 2))], [np.zeros(3)])


def test_default_architecture():
    net = dqn.init_network(22, 11, seed=1)
    assert net.layer_dims == [22, 64, 64, 64, 64, 64, 11]
    for w, fan_in in zip(net.weights, net.layer_dims):
        assert np.abs(w).max() <= 1.0 / np.sqrt(fan_in)


def test_gradient_check_random_nets():
    errors = [gradient_check(seed) for seed in range(100)]
    assert max(errors) < 1e-4


def test_done_target_is_reward():
    net = dqn.init_network(3, 2, 0, 1, 4, use_embedding=False)
    exps = [Experience(np.ones(3), 0, 0.7, np.ones(3), True), Experience(np.zeros(3), 1, -0.2, np.ones(3), True)]
    batch = dqn.make_batch(exps, 2, 0.9)
    assert dqn.td_targets(net, batch).tolist() == [0.7, -0.2]


def test_zero_loss_leaves_weights():
    net = dqn.init_network(3, 2, 0, 1, 4, use_embedding=False)
    s = np.array([0.2, -0.1, 0.4])
    q = dqn.forward(net, s)
    new, loss = dqn.train_step(net, net.copy(), [Experience(s, 1, float(q[1]), s, True)], Hyperparams())
    assert loss == 0.0
    assert all(np.array_equal(a, b) for a, b in zip(new.params(), net.params()))


def test_train_step_does_not_mutate_inputs():
    net = dqn.init_network(3, 2, 0, 1, 4, use_embedding=False)
    target = net.copy()
    snap = [p.copy() for p in net.params()] + [p.copy() for p in target.params()]
    exps = [Experience(np.ones(3), 0, 1.0, np.zeros(3), False)]
    dqn.train_step(net, target, exps, Hyperparams())
    assert all(np.array_equal(a, b) for a, b in zip(snap, net.params() + target.params()))
    with pytest.raises(EmptyBatch):
        dqn.train_step(net, target, [], Hyperparams())


def test_time_based_discount():
    net = QNetwork([1, 2], [np.zeros((1, 2))], [np.array([1.0, 2.0])])
    e = Experience(np.zeros(1), 0, 0.0, np.zeros(1), False, discount=0.5**2)
    assert dqn.td_targets(net, dqn.make_batch([e], 2, 0.5)).tolist() == [0.5]
    masked = Experience(np.zeros(1), 0, 0.0, np.zeros(1), False, discount=1.0, next_mask=np.array([True, False]))
    assert dqn.td_targets(net, dqn.make_batch([masked], 2, 0.5)).tolist() == [1.0]


def test_act_examples():
    rng = np.random.default_rng(0)
    assert dqn.act(linear_net([1, 3, 2, 0]), np.zeros(1), 0.0, rng) == 1
    assert dqn.act(linear_net([5, 5, 0, 0]), np.zeros(1), 0.0, rng) == 0
    assert dqn.act(linear_net([1, 3, 2, 0]), np.zeros(1), 0.0, rng, mask=np.array([1, 0, 1, 1], bool)) == 2


def test_act_uniform_when_exploring():
    rng = np.random.default_rng(123)
    net = linear_net([1, 3, 2, 0])
    counts = np.bincount([dqn.act(net, np.zeros(1), 1.0, rng) for _ in range(100_000)], minlength=4)
    assert np.all(np.abs(counts / 100_000 - 0.25) < 0.03)


def test_epsilon_schedule():
    hp = Hyperparams(epsilon_start=1.0, epsilon_end=0.1, epsilon_decay_steps=1000)
    assert dqn.epsilon_at(0, hp) == 1.0
    assert dqn.epsilon_at(500, hp) == pytest.approx(0.55)
    assert dqn.epsilon_at(1000, hp) == 0.1
    assert dqn.epsilon_at(10**6, hp) == 0.1


@given(st.integers(1, 20), st.integers(0, 40))
def test_replay_ring_keeps_latest(capacity, extra):
    buf = ReplayBuffer(capacity)
    for i in range(capacity + extra):
        buf.push(Experience(np.array([float(i)]), 0, float(i), np.zeros(1), False))
    kept = [e.r for e in buf.experiences()]
    assert kept == [float(i) for i in range(extra, capacity + extra)]


def test_replay_sample_shapes():
    buf = ReplayBuffer(10)
    for i in range(10):
        buf.push(Experience(np.full(3, i, float), i % 2, 0.0, np.zeros(3), i == 9, discount=0.5))
    batch = buf.sample(np.random.default_rng(0), 6, 0.9)
    assert len(batch) == 6 and batch.s.shape == (6, 3)
    assert set(batch.discount.tolist()) == {0.5}


def test_margin_examples():
    # layout: assign, reroute, expedite, defer
    assert dqn.margin_from_q(np.array([0.0, 2.0, 1.0, -1.0])) == 2.0
    zero = QNetwork([2, 4], [np.zeros((2, 4))], [np.zeros(4)])
    assert dqn.q_margin(zero, np.zeros(2)) == 0.0


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=12), st.floats(-100, 100))
def test_margin_shift_invariant(q, c):
    q = np.array(q)
    assert dqn.margin_from_q(q + c) == pytest.approx(dqn.margin_from_q(q), abs=1e-9)


def test_zero_steps_returns_initialisation():
    hp = Hyperparams(train_steps=0, hidden_layers=1, hidden_width=8, use_embedding=False)
    net, log = dqn.train_dqn(lambda k: None, hp, 5, 4, 2)
    init = dqn.init_network(4, 2, 5, 1, 8, False)
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), init.params()))
    assert log.episode_rewards == []


def test_chain_mdp_matches_value_iteration():
    net, log = train_chain(seed=0)
    q_star = value_iteration(CHAIN_HP.gamma)
    q = chain_q(net)
    assert np.abs(q - q_star).max() < 0.05
    assert q.argmax(axis=1).tolist() == q_star.argmax(axis=1).tolist()
    assert log.target_syncs == CHAIN_HP.train_steps // CHAIN_HP.target_sync_every


def test_training_is_deterministic():
    hp = Hyperparams(**{**CHAIN_HP.__dict__, "train_steps": 600})
    a, _ = train_chain(seed=3, hp=hp)
    b, _ = train_chain(seed=3, hp=hp)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))


def test_grid_search_rules():
    p1 = Hyperparams(hidden_width=16)
    p2 = Hyperparams(hidden_width=32)
    folds = [[0, 1], [2, 3]]
    best, rows = dqn.grid_search([p1], folds, lambda hp, tr, va: 0.4)
    assert best == p1 and rows[0].mean == 0.4
    best, rows = dqn.grid_search([p1, p1], folds, lambda hp, tr, va: 0.5)
    assert best is p1 and len(rows) == 2
    default = Hyperparams(hidden_layers=5, learning_rate=0.01)
    best, rows = dqn.grid_search([p1, default, p2], folds, lambda hp, tr, va: hp.hidden_width / 100 + len(va))
    assert [r.hp for r in rows] == [p1, default, p2]
    with pytest.raises(EmptyGrid):
        dqn.grid_search([], folds, lambda *a: 0.0)


def test_grid_folds_are_disjoint():
    seen = []
    dqn.grid_search([Hyperparams()], [[0, 1], [2], [3, 4]], lambda hp, tr, va: seen.append((tr, va)) or 0.0)
    for tr, va in seen:
        assert set(tr).isdisjoint(va) and sorted(tr + va) == [0, 1, 2, 3, 4]


def test_checkpoint_roundtrip(tmp_path):
    net = dqn.init_network(22, 11, seed=9)
    path = tmp_path / "q.json"
    dqn.save_network(net, path, {"seed": 9})
    back, meta = dqn.load_network(path)
    x = np.random.default_rng(0).normal(size=(5, 22))
    assert np.array_equal(dqn.forward(back, x, np.arange(5)), dqn.forward(net, x, np.arange(5)))
    assert meta == {"seed": 9}
    d = json.loads(path.read_text())
    d["version"] = 99
    with pytest.raises(Exception):
        dqn.network_from_dict(d)
