import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ltmsim.bandit import (
    ContextBuilder, KernelUCB, RewardInputs, RunningStats, arccos_gram, arccos_kernel, reward,
)


def oracle_kernel(x, y):
    # direct transcription of the order-1 arc-cosine kernel
    nx, ny = math.sqrt(sum(a * a for a in x)), math.sqrt(sum(b * b for b in y))
    if nx == 0 or ny == 0:
        return 0.0
    c = max(-1.0, min(1.0, sum(a * b for a, b in zip(x, y)) / (nx * ny)))
    t = math.acos(c)
    return nx * ny / math.pi * (math.sin(t) + (math.pi - t) * math.cos(t))


def test_kernel_examples():
    assert arccos_kernel([2.0, 0.0], [2.0, 0.0]) == pytest.approx(4.0)
    assert arccos_kernel([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1 / math.pi)
    assert arccos_kernel([1.0, 2.0], [-1.0, -2.0]) == pytest.approx(0.0, abs=1e-12)
    assert arccos_kernel([0.0, 0.0], [1.0, 1.0]) == 0.0
    with pytest.raises(ValueError):
        arccos_kernel([1.0], [1.0, 2.0])


vec = arrays(np.float64, 4, elements=st.floats(-5, 5))


@given(vec, vec)
def test_kernel_matches_oracle_and_is_symmetric(x, y):
    k = arccos_kernel(x, y)
    assert k == pytest.approx(oracle_kernel(x, y), abs=1e-9)
    assert k == pytest.approx(arccos_kernel(y, x), abs=1e-12)
    assert k >= -1e-12


@given(arrays(np.float64, (6, 3), elements=st.floats(-3, 3)))
def test_gram_is_positive_semidefinite(X):
    K = arccos_gram(X, X)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-8 * max(1.0, np.abs(K).max())


def test_empty_support_prior():
    b = KernelUCB(3, exploration=1.0)
    mu, sd = b.posterior(np.array([[3.0, 4.0, 0.0], [1.0, 0.0, 0.0]]))
    assert np.allclose(mu, 0.0)
    assert np.allclose(sd, [5.0, 1.0])
    # largest prior deviation wins
    assert b.select_arm(np.array([[1.0, 0.0, 0.0], [3.0, 4.0, 0.0]])) == 1


def test_tie_breaks_on_rsrp_then_id():
    b = KernelUCB(2)
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert b.select_arm(X, rsrp_dbm=[-80.0, -70.0, -70.0], arm_ids=[5, 9, 3]) == 2
    assert b.select_arm(X, rsrp_dbm=[-80.0, -70.0, -75.0], arm_ids=[5, 9, 3]) == 1


def test_update_shrinks_uncertainty_and_learns_reward():
    b = KernelUCB(2, ridge=0.1)
    x = np.array([1.0, 0.5])
    sd0 = b.posterior(x)[1][0]
    for _ in range(20):
        b.update(x, 2.0)
    mu, sd = b.posterior(x)
    assert sd[0] < 0.2 * sd0
    assert mu[0] == pytest.approx(1.0, abs=0.05)  # normalized by the running max


def test_window_keeps_latest_pairs():
    W = 5
    b = KernelUCB(2, window=W)
    xs = np.random.default_rng(0).normal(size=(W + 3, 2))
    for i, x in enumerate(xs):
        b.update(x, float(i))
    assert b.size == W
    assert np.array_equal(b.X, xs[-W:])
    assert np.array_equal(b.r, np.arange(3, W + 3, dtype=float))


@pytest.mark.parametrize("window", [4, 30])
def test_incremental_inverse_matches_direct(window):
    rng = np.random.default_rng(window)
    b = KernelUCB(5, window=window, ridge=0.5, refresh=10_000)
    for t in range(3 * window + 7):
        b.update(rng.normal(size=5), rng.uniform())
        X = b.X
        direct = np.linalg.inv(arccos_gram(X, X) + 0.5 * np.eye(len(X)))
        assert np.allclose(b.Kinv, direct, atol=1e-8)


def test_rescaled_rewards_give_identical_decisions():
    rng = np.random.default_rng(3)
    a, b = KernelUCB(3), KernelUCB(3)
    for _ in range(60):
        arms = rng.normal(size=(4, 3))
        ia, ib = a.select_arm(arms), b.select_arm(arms)
        assert ia == ib
        r = float(rng.uniform())
        a.update(arms[ia], r)
        b.update(arms[ib], 37.5 * r)


def test_non_finite_reward_rejected():
    with pytest.raises(ValueError):
        KernelUCB(2).update([1.0, 0.0], float("nan"))
    with pytest.raises(ValueError):
        KernelUCB(2, window=0)


def test_reward_table():
    assert reward(RewardInputs(100.0)) == 100.0
    assert reward(RewardInputs(100.0, ho=True)) == pytest.approx(80.0)
    assert reward(RewardInputs(100.0, ho=True, pp=True)) == pytest.approx(72.0)
    assert reward(RewardInputs(100.0, hof=True)) == pytest.approx(10.0)
    assert reward(RewardInputs(100.0, ho=True, rlf=True)) == 0.0
    with pytest.raises(ValueError):
        RewardInputs(-1.0)
    with pytest.raises(ValueError):
        RewardInputs(1.0, alpha_ho=0.0)


flags = st.booleans()


@given(st.floats(0, 1e9), flags, flags, flags, flags, flags)
def test_reward_monotone_in_events(r, ho, hof, rlf, pp, extra):
    base = RewardInputs(r, ho=ho, hof=hof, rlf=rlf, pp=pp)
    v = reward(base)
    assert 0.0 <= v <= r
    for name in ("ho", "hof", "rlf", "pp"):
        if not getattr(base, name):
            worse = RewardInputs(r, **{**dict(ho=ho, hof=hof, rlf=rlf, pp=pp), name: True})
            assert reward(worse) <= v


def test_running_stats_matches_numpy():
    rows = np.random.default_rng(4).normal(3.0, 2.0, size=(50, 2))
    s = RunningStats(2)
    s.push(rows)
    assert np.allclose(s.mean, rows.mean(axis=0))
    assert np.allclose(s.zscore(rows), (rows - rows.mean(0)) / rows.std(0, ddof=1))


def test_context_layout():
    cb = ContextBuilder(n_sites=3)
    X = cb.build(np.zeros((2, 5)), [1, 0], [2, 0])
    assert X.shape == (2, cb.dim) == (2, 10)
    assert np.array_equal(X[:, 5], [1.0, 0.0])
    assert np.array_equal(X[:, 6], [1.0, 1.0])
    assert np.array_equal(X[:, 7:], [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(ValueError):
        cb.build(np.full((1, 5), np.inf), [0], [0])
