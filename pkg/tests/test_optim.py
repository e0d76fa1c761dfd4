import numpy as np
import pytest

from onet.graph import graph_build
from onet.models import ModelConfig, build_onet
from onet.optim import AdamState, RegistryMismatch, TrainConfig, TrainLog, adam_step, epoch_permutation, train

from oracles import scalar_adam


def scalar_state(**kw):
    return AdamState.zeros_like([np.zeros(1)], **kw)


def test_first_step_is_lr_times_sign():
    theta = np.array([1.0])
    adam_step(scalar_state(), [theta], [np.array([2.0])])
    # m_hat = g, v_hat = g^2 on the first step
    assert theta[0] == pytest.approx(1.0 - 1e-3 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert abs((1.0 - theta[0]) - 1e-3) / 1e-3 < 1e-6


@pytest.mark.parametrize("g", [0.05, 0.5, -7.0, 1e4, -1e-3])
def test_first_step_magnitude_is_lr(g):
    theta = np.array([0.0])
    adam_step(scalar_state(), [theta], [np.array([g])])
    # exact magnitude is lr * |g| / (|g| + eps)
    assert abs(theta[0]) == pytest.approx(1e-3 * abs(g) / (abs(g) + 1e-8), rel=1e-12)
    if abs(g) >= 1e-2:
        assert abs(abs(theta[0]) - 1e-3) / 1e-3 < 1e-6
    assert np.sign(theta[0]) == -np.sign(g)


def test_zero_gradient_is_noop():
    params = [np.array([1.5, -2.0]), np.ones((2, 2))]
    before = [p.copy() for p in params]
    state = AdamState.zeros_like(params)
    adam_step(state, params, [np.zeros(2), np.zeros((2, 2))])
    assert state.t == 1
    for p, b in zip(params, before):
        assert np.array_equal(p, b)


def test_quadratic_matches_scalar_reference():
    theta = np.array([1.0])
    state = scalar_state()
    traj = []
    for _ in range(100):
        adam_step(state, [theta], [2 * theta.copy()])
        traj.append(theta[0])
    ref = scalar_adam(1.0, lambda th: 2 * th, 100)
    assert max(abs(a - b) for a, b in zip(traj, ref)) <= 1e-12
    assert abs(traj[-1]) < 0.95
    assert all(abs(b) < abs(a) for a, b in zip([1.0] + traj, traj))


def test_first_step_scale_equivariance(rng):
    g = rng.uniform(0.5, 2.0, size=10) * rng.choice([-1, 1], size=10)
    deltas = []
    for c in (1.0, 37.0, 0.05):
        p = np.zeros(10)
        adam_step(AdamState.zeros_like([p]), [p], [c * g])
        deltas.append(p)
    for d in deltas[1:]:
        np.testing.assert_allclose(d, deltas[0], rtol=1e-6)


def test_misaligned_registry_rejected():
    with pytest.raises(RegistryMismatch):
        adam_step(scalar_state(), [np.zeros(1)], [np.zeros(1), np.zeros(1)])
    with pytest.raises(RegistryMismatch):
        adam_step(scalar_state(), [np.zeros(1)], [np.zeros(2)])


def test_second_moment_nonnegative(rng):
    p = rng.normal(size=5)
    st = AdamState.zeros_like([p])
    for _ in range(20):
        adam_step(st, [p], [rng.normal(size=5)])
    assert np.all(st.v[0] >= 0)


def frozen_graph(size=4):
    return graph_build([
        {"id": "in", "kind": "input", "shape": [1, size, size]},
        {"id": "s", "kind": "sigmoid", "inputs": ["in"]},
        {"id": "out", "kind": "output", "inputs": ["s"]},
    ])


def test_constant_loss_stops_at_epoch_two():
    x = np.random.default_rng(0).normal(size=(6, 1, 4, 4))
    y = np.zeros_like(x)
    _, log = train(frozen_graph(), x, y, TrainConfig())
    assert [r.epoch for r in log.records] == [1, 2]
    assert log.stopped_early and log.records[-1].stopped_early
    assert not log.records[0].stopped_early


def test_never_stops_before_two_epochs():
    x = np.zeros((3, 1, 4, 4))
    _, log = train(frozen_graph(), x, x.copy(), TrainConfig(stop_delta=1e9))
    assert len(log.records) == 2


def test_shuffle_is_permutation_and_short_batch_trained():
    g = build_onet(ModelConfig(input_size=16, base_channels=2, depth=2))
    x = np.random.default_rng(0).uniform(size=(10, 1, 16, 16))
    y = (x > 0.5).astype(float)
    seen = {}
    _, log = train(g, x, y, TrainConfig(max_epochs=3, stop_delta=0),
                   on_batch=lambda e, idx: seen.setdefault(e, []).append(list(idx)))
    assert len(log.records) == 3
    for epoch, batches in seen.items():
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(i for b in batches for i in b) == list(range(10))
    assert seen[1] != seen[2]
    assert log.records[-1].steps == 9


def test_epoch_permutation_depends_on_seed_and_epoch():
    a = epoch_permutation(0, 1, 50)
    assert sorted(a) == list(range(50))
    assert not np.array_equal(a, epoch_permutation(0, 2, 50))
    assert not np.array_equal(a, epoch_permutation(1, 1, 50))
    assert np.array_equal(a, epoch_permutation(0, 1, 50))


def test_max_steps_cap():
    g = build_onet(ModelConfig(input_size=16, base_channels=2, depth=2))
    x = np.random.default_rng(0).uniform(size=(10, 1, 16, 16))
    st, log = train(g, x, (x > 0.5).astype(float), TrainConfig(max_steps=4, stop_delta=0))
    assert st.t == 4
    assert len(log.records) == 2 and log.records[-1].steps == 4


def test_training_is_deterministic():
    x = np.random.default_rng(0).uniform(size=(5, 1, 16, 16))
    y = (x > 0.6).astype(float)
    runs = []
    for _ in range(2):
        g = build_onet(ModelConfig(input_size=16, base_channels=2, depth=2), seed=3)
        _, log = train(g, x, y, TrainConfig(max_epochs=4, stop_delta=0, seed=9))
        runs.append(([(r.epoch, r.loss, r.stopped_early, r.steps) for r in log.records],
                     [w.copy() for w in g.param_arrays()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        assert np.array_equal(a, b)


def test_training_reduces_loss():
    x = np.random.default_rng(0).uniform(size=(4, 1, 16, 16))
    y = (x > 0.5).astype(float)
    g = build_onet(ModelConfig(input_size=16, base_channels=2, depth=2))
    _, log = train(g, x, y, TrainConfig(max_epochs=15, stop_delta=0, lr=1e-2))
    assert log.losses()[-1] < log.losses()[0]


def test_train_rejects_bad_input():
    g = frozen_graph()
    with pytest.raises(ValueError, match="empty"):
        train(g, np.zeros((0, 1, 4, 4)), np.zeros((0, 1, 4, 4)), TrainConfig())
    with pytest.raises(ValueError):
        train(g, np.zeros((2, 1, 8, 8)), np.zeros((2, 1, 8, 8)), TrainConfig())
    with pytest.raises(ValueError, match="batch_size"):
        train(g, np.zeros((2, 1, 4, 4)), np.zeros((2, 1, 4, 4)), TrainConfig(batch_size=0))


def test_trainlog_roundtrip(tmp_path):
    _, log = train(frozen_graph(), np.zeros((2, 1, 4, 4)), np.zeros((2, 1, 4, 4)), TrainConfig())
    log.write(tmp_path / "log.jsonl")
    assert TrainLog.read(tmp_path / "log.jsonl") == log
