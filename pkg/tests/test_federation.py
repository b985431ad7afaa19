import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedchain import contract as sc
from fedchain.federation import (
    EmptyUpdates,
    FederationConfig,
    VerificationVerdict,
    WorkerUpdate,
    aggregate,
    minted_total,
    reward_accepted,
    verify_update,
)
from fedchain.ledger import Chain, miner_id
from fedchain.model import DimensionMismatch, ModelWeights, TrainConfig, init_weights, train_local


def brute_force_mean(vectors, coefs):
    """Weighted sum with exact coefficients and correctly rounded sums."""
    d = len(vectors[0])
    return [math.fsum(float(c) * v[j] for c, v in zip(coefs, vectors)) for j in range(d)]


def exact_coefs(sizes, weighting):
    k = len(sizes)
    if weighting == "sample_proportional":
        return [Fraction(n, sum(sizes)) for n in sizes]
    if weighting == "paper_literal":
        return [Fraction(n, k) for n in sizes]
    return [Fraction(1, k)] * k


def aggregate_scale(vecs, coefs, weighting):
    """1 for convex weightings; the magnitude of the summed terms otherwise.

    n_i/K coefficients are not convex, so outputs reach 1e5 and beyond where
    a float64 ulp alone exceeds 1e-12.
    """
    if weighting != "paper_literal":
        return 1.0
    return np.maximum(1.0, sum(abs(float(c)) * np.abs(v) for c, v in zip(coefs, vecs)))


def test_single_update_is_identity():
    w = ModelWeights([1.5, -2.0], 0.25)
    assert aggregate([(w, 37)]) == w


def test_symmetric_pair():
    out = aggregate([(ModelWeights([0.0, 0.0], 0.0), 1), (ModelWeights([1.0, 1.0], 0.0), 1)])
    assert out.w.tolist() == [0.5, 0.5]


def test_weighted_pair():
    out = aggregate([(ModelWeights([0.0], 0.0), 1), (ModelWeights([4.0], 0.0), 3)])
    assert out.w.tolist() == [3.0]


def test_paper_literal_coefficients_need_not_sum_to_one():
    w = ModelWeights([1.0], 1.0)
    out = aggregate([WorkerUpdate(1, w, 4), WorkerUpdate(2, w, 6)], "paper_literal")
    assert out.w.tolist() == [5.0] and out.bias == 5.0


def test_guards():
    with pytest.raises(EmptyUpdates):
        aggregate([])
    with pytest.raises(DimensionMismatch):
        aggregate([(ModelWeights([1.0], 0), 1), (ModelWeights([1.0, 2.0], 0), 1)])
    with pytest.raises(ValueError):
        aggregate([(ModelWeights([1.0], 0), 0)])
    with pytest.raises(ValueError):
        FederationConfig(weighting="median")


@pytest.mark.parametrize("weighting", ["sample_proportional", "paper_literal", "uniform"])
def test_matches_brute_force(weighting):
    rng = np.random.default_rng(hash(weighting) % 2**32)
    for _ in range(200):
        k = int(rng.integers(1, 6))
        d = int(rng.integers(1, 5))
        sizes = [int(n) for n in rng.integers(1, 5000, size=k)]
        ups = [WorkerUpdate(i + 1, ModelWeights(rng.normal(scale=50, size=d), rng.normal(scale=50)), n)
               for i, n in enumerate(sizes)]
        out = aggregate(ups, weighting)
        vecs = [np.r_[u.weights.w, u.weights.bias] for u in ups]
        coefs = exact_coefs(sizes, weighting)
        want = brute_force_mean(vecs, coefs)
        assert np.all(np.abs(np.r_[out.w, out.bias] - want) <= 1e-12 * aggregate_scale(vecs, coefs, weighting))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.integers(1, 10_000)), min_size=1, max_size=6),
       st.sampled_from(["sample_proportional", "uniform"]), st.randoms(use_true_random=False))
def test_identical_weights_and_permutations(pairs, weighting, r):
    ups = [WorkerUpdate(i, ModelWeights([x, -x], x / 3), n) for i, (x, n) in enumerate(pairs)]
    shuffled = ups[:]
    r.shuffle(shuffled)
    assert aggregate(ups, weighting) == aggregate(shuffled, weighting)
    same = ModelWeights([0.1, 0.2], 0.3)
    agg = aggregate([WorkerUpdate(i, same, n) for i, (_, n) in enumerate(pairs)], weighting)
    assert np.allclose(agg.w, same.w, rtol=1e-12) and math.isclose(agg.bias, same.bias, rel_tol=1e-12)


def _linear_task(seed, n=3000, d=6):
    rng = np.random.default_rng(seed)
    coef = rng.normal(scale=10, size=d)
    X = rng.normal(size=(n, d))
    y = np.clip(60 + X @ coef + rng.normal(scale=2, size=n), 0, 125)
    return X[: n // 2], y[: n // 2], X[n // 2:], y[n // 2:]


def test_identical_candidate_is_rejected():
    X, y, Xv, yv = _linear_task(0)
    w = init_weights(6, 0, y)
    v = verify_update(w, w, Xv, yv)
    assert not v.accepted and v.rmse_before == v.rmse_after


def test_exploding_candidate_is_rejected():
    X, y, Xv, yv = _linear_task(1)
    inc = init_weights(6, 0, y)
    v = verify_update(ModelWeights(np.full(6, 1e6), 1e6), inc, Xv, yv)
    assert not v.accepted and v.rmse_after > v.rmse_before


def test_further_training_is_accepted():
    X, y, Xv, yv = _linear_task(2)
    inc = init_weights(6, 0, y)
    cand = train_local(inc, X, y, TrainConfig(epochs=10, learning_rate=0.05))
    v = verify_update(cand, inc, Xv, yv, worker_id=3)
    assert v.accepted and v.rmse_after < v.rmse_before and v.worker_id == 3
    assert verify_update(cand, inc, Xv, yv, worker_id=3) == v
    assert verify_update(cand, inc, Xv, yv, mode="merged").accepted


def test_reward_flow():
    chain = Chain(difficulty=4)
    a, b = sc.address_from_label("a"), sc.address_from_label("b")
    rejected = VerificationVerdict(2, False, 10.0, 11.0)
    assert reward_accepted(rejected, chain, b) is None
    assert chain.mempool == [] and rejected.reward_tx_id is None
    verdicts = [VerificationVerdict(i, True, 10.0, 9.0) for i in range(3)]
    for v in verdicts:
        tx = reward_accepted(v, chain, a)
        assert v.reward_tx_id == tx.tx_id
    chain.mine_block(miner_id(1))
    assert chain.state.balance_of(a) == 3
    assert minted_total(chain.state) == chain.state.total_minted == 3
