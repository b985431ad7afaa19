import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fedchain import model as m
from fedchain.model import ModelWeights, TrainConfig

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def fd_gradient(weights, X, y, eps, lam, h=1e-6):
    """Central differences of the mean loss over (w, bias)."""
    theta = np.r_[weights.w, weights.bias]
    grad = np.empty_like(theta)
    for j in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        lu = m.loss(ModelWeights(up[:-1], up[-1]), X, y, eps, lam)
        ld = m.loss(ModelWeights(dn[:-1], dn[-1]), X, y, eps, lam)
        grad[j] = (lu - ld) / (2 * h)
    return grad


def random_probe(rng, d, n=1, eps=2.0, margin=1e-3):
    """Draw (w, X, y) with every |residual| - eps at least ``margin`` from the kink."""
    while True:
        w = ModelWeights(rng.normal(size=d), rng.normal())
        X = rng.normal(size=(n, d))
        y = rng.normal(scale=5.0, size=n)
        r = y - m.raw_scores(w, X)
        if np.all(np.abs(np.abs(r) - eps) > margin):
            return w, X, y


def max_relative_error(weights, X, y, eps, lam):
    gw, gb = m.subgradient(weights, X, y, eps, lam)
    g = np.r_[gw, gb]
    fd = fd_gradient(weights, X, y, eps, lam)
    return np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-12)


def test_subgradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w, X, y = random_probe(rng, 16)
        assert max_relative_error(w, X, y, 2.0, 1e-4) < 1e-5


def test_subgradient_minibatch():
    rng = np.random.default_rng(1)
    for _ in range(10):
        w, X, y = random_probe(rng, 4, n=8, eps=0.5)
        assert max_relative_error(w, X, y, 0.5, 0.1) < 1e-5


def test_loss_dead_zone():
    w = ModelWeights(np.array([1.0, -2.0]), 0.5)
    X = np.array([[1.0, 1.0], [0.0, 2.0]])
    pred = m.raw_scores(w, X)
    reg = 0.5 * 0.3 * 5.0
    # everything inside the tube: loss is the penalty alone
    assert m.loss(w, X, pred + 1.9, 2.0, 0.3) == pytest.approx(reg)
    assert np.all(m.per_sample_loss(w, X, pred - 1.0, 2.0, 0.0) == 0)


@settings(max_examples=100)
@given(hnp.arrays(float, 3, elements=finite), finite, hnp.arrays(float, (5, 3), elements=finite),
       hnp.arrays(float, 5, elements=finite), st.floats(0, 10), st.floats(0, 1))
def test_loss_non_negative(w, b, X, y, eps, lam):
    assert np.all(m.per_sample_loss(ModelWeights(w, b), X, y, eps, lam) >= 0)


def test_init_weights():
    a = m.init_weights(16, 3)
    assert a == m.init_weights(16, 3)
    assert a.d == 16 and np.all(np.abs(a.w) <= 0.01)
    assert a.bias == 0.0
    assert m.init_weights(4, 3, labels=[1.0, 3.0]).bias == 2.0
    with pytest.raises(ValueError):
        m.init_weights(0, 1)


def test_zero_epochs_is_identity():
    start = m.init_weights(3, 0)
    X, y = np.ones((4, 3)), np.ones(4)
    assert m.train_local(start, X, y, TrainConfig(epochs=0)) is start


def test_bias_walks_monotonically_to_target():
    """One sample, x = 0, eps = 0, lam = 0: only the bias moves, by lr per step.

    lr = 0.25 is exact in binary, so the bias lands on 5 after 20 steps and the
    zero residual then has zero subgradient.
    """
    w = ModelWeights(np.zeros(2), 0.0)
    X, y = np.zeros((1, 2)), np.array([5.0])
    trace = []
    for seed in range(60):
        w = m.train_local(w, X, y, TrainConfig(learning_rate=0.25, epochs=1, epsilon=0.0, reg_lambda=0.0, seed=seed))
        trace.append(w.bias)
    dist = [abs(5.0 - b) for b in trace]
    assert all(b <= a + 1e-12 for a, b in zip(dist, dist[1:]))
    assert trace[0] == 0.25
    assert trace[19:] == [5.0] * 41


def test_training_reduces_loss_on_normalized_data():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2000, 16))
    y = np.clip(60 + X @ rng.normal(scale=8, size=16) + rng.normal(scale=3, size=2000), 0, 125)
    start = m.init_weights(16, 0, y)
    cfg = TrainConfig()
    end = m.train_local(start, X, y, cfg)
    assert m.loss(end, X, y, cfg.epsilon, cfg.reg_lambda) <= m.loss(start, X, y, cfg.epsilon, cfg.reg_lambda)
    assert end.is_finite()
    assert end == m.train_local(start, X, y, cfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X = np.full((4, 2), 1e308)
    with pytest.raises(m.NonFiniteLoss, match="epoch 0"):
        m.train_local(ModelWeights(np.zeros(2), 0.0), X, np.array([1e308] * 4), TrainConfig(learning_rate=1e10))


def test_predict_and_clamp():
    w = ModelWeights(np.zeros(3), 60.0)
    assert np.all(m.predict(w, np.random.default_rng(0).normal(size=(5, 3))) == 60)
    assert m.predict(ModelWeights([1.0], -10.0), [[0.0]])[0] == 0
    assert m.predict(ModelWeights([1.0], 0.0), [[200.0]])[0] == 125
    assert m.predict(ModelWeights([1.0], 0.0), [[42.5]])[0] == 42.5
    with pytest.raises(m.DimensionMismatch):
        m.predict(w, np.zeros((2, 4)))


def test_rmse():
    assert m.rmse([1, 2, 3], [1, 2, 3]) == 0
    assert m.rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    assert m.rmse([0, 0], [3, 4]) == pytest.approx(3.5355339, abs=1e-6)
    with pytest.raises(ValueError):
        m.rmse([], [])


def test_serialized_size():
    blob = m.serialize_weights(m.init_weights(16, 0))
    assert len(blob) == 4 + 1 + 4 + 17 * 8 == 145
    assert blob[:5] == b"FCW1\x01"
    assert int.from_bytes(blob[5:9], "little") == 16


def test_roundtrip_random_models():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        d = int(rng.integers(1, 40))
        w = ModelWeights(rng.normal(scale=10 ** rng.uniform(-5, 5), size=d), rng.normal())
        blob = m.serialize_weights(w)
        back = m.deserialize_weights(blob)
        assert np.array_equal(back.w, w.w) and back.bias == w.bias
        assert m.serialize_weights(back) == blob


@pytest.mark.parametrize("mutate,exc", [
    (lambda b: b"XCW1" + b[4:], m.BadMagic),
    (lambda b: b[:-1], m.TruncatedPayload),
    (lambda b: b[:3], m.TruncatedPayload),
    (lambda b: b[:4] + b"\x02" + b[5:], m.VersionMismatch),
])
def test_deserialize_guards(mutate, exc):
    with pytest.raises(exc):
        m.deserialize_weights(mutate(m.serialize_weights(m.init_weights(16, 0))))


def test_nonfinite_weights_are_not_serialized():
    with pytest.raises(m.ModelError):
        m.serialize_weights(ModelWeights([np.nan], 0.0))
