import math

import numpy as np
import pytest

from hyran.baselines import (
    DRTS,
    LinTS,
    LinUCB,
    RidgeState,
    SupLinUCB,
    UniformRandom,
    linucb_scores,
    sample_posterior,
)
from hyran.core import select_arm
from hyran.errors import InternalInvariantError, InvalidArgument, UnsupportedConfiguration
from hyran.linalg import spd_solve


def contexts(rng, N=5, d=3):
    X = rng.standard_normal((N, d))
    return X / np.maximum(1.0, np.linalg.norm(X, axis=1, keepdims=True))


def drive(policy, T, seed, N=5, d=3):
    rng = np.random.default_rng(seed)
    beta = rng.uniform(-1, 1, d) / math.sqrt(d)
    arms, history = [], []
    for _ in range(T):
        X = contexts(rng, N, d)
        a = policy.select(X)
        y = float(X[a] @ beta + rng.standard_normal())
        policy.update(X, a, y)
        arms.append(a)
        history.append((X, a, y))
    return arms, history


def test_ridge_state_oracle():
    _, hist = drive(LinUCB(3, 0.5), 200, 0)
    pol = LinUCB(3, 0.5)
    for X, a, y in hist:
        pol.update(X, a, y)
    A = np.eye(3) + sum(np.outer(X[a], X[a]) for X, a, _ in hist)
    b = sum(X[a] * y for X, a, y in hist)
    np.testing.assert_allclose(pol.state.A, A, atol=1e-8)
    np.testing.assert_allclose(pol.state.b, b, atol=1e-8)
    assert np.linalg.eigvalsh(pol.state.A)[0] >= 1 - 1e-8


def test_ridge_widths_match_inverse():
    rng = np.random.default_rng(1)
    st = RidgeState(4, 2.0)
    for _ in range(30):
        st.update(contexts(rng, 1, 4)[0], 0.0)
    X = contexts(rng, 6, 4)
    w = np.sqrt(np.einsum("ij,jk,ik->i", X, np.linalg.inv(st.A), X))
    np.testing.assert_allclose(st.widths(X), w, rtol=1e-12)


def test_linucb_cold_start_tie():
    pol = LinUCB(2, 1.0)
    np.testing.assert_allclose(linucb_scores(pol.state, np.eye(2), 1.0), [1.0, 1.0])
    assert pol.select(np.eye(2)) == 0


def test_linucb_alpha_zero_is_greedy():
    pol = LinUCB(3, 0.0)
    rng = np.random.default_rng(2)
    for _ in range(50):
        X = contexts(rng)
        assert pol.select(X) == select_arm(X, pol.state.estimate())
        pol.update(X, pol.select(X), float(rng.standard_normal()))


def test_linucb_ucb_value_manual():
    st = RidgeState(1)
    st.A = np.array([[2.0]])
    st.b = np.array([1.0])
    assert linucb_scores(st, np.array([[1.0]]), 1.0)[0] == pytest.approx(1.2071067811865475, abs=1e-15)


def test_linucb_rejects_negative_alpha():
    with pytest.raises(InvalidArgument):
        LinUCB(2, -1.0)


def test_lints_small_v_is_greedy():
    rng = np.random.default_rng(3)
    st = RidgeState(3)
    for _ in range(20):
        st.update(contexts(rng, 1)[0], float(rng.standard_normal()))
    X = contexts(rng)
    greedy = select_arm(X, st.estimate())
    g = np.random.default_rng(4)
    picks = [select_arm(X, sample_posterior(st, 1e-8, g)) for _ in range(1000)]
    assert np.mean(np.array(picks) == greedy) >= 0.999


def test_lints_sample_variance_identity_gram():
    st = RidgeState(3)
    v = 0.7
    g = np.random.default_rng(5)
    draws = np.array([sample_posterior(st, v, g) for _ in range(10_000)])
    np.testing.assert_allclose(draws.var(axis=0, ddof=1), v * v, rtol=0.10)


def test_lints_posterior_covariance():
    rng = np.random.default_rng(6)
    st = RidgeState(2)
    for _ in range(10):
        st.update(contexts(rng, 1, 2)[0], 1.0)
    g = np.random.default_rng(7)
    draws = np.array([sample_posterior(st, 1.0, g) for _ in range(40_000)])
    np.testing.assert_allclose(np.cov(draws.T), np.linalg.inv(st.A), atol=0.01)
    np.testing.assert_allclose(draws.mean(axis=0), spd_solve(st.A, st.b), atol=0.02)


def test_lints_deterministic():
    a, _ = drive(LinTS(3, 0.5, np.random.default_rng(9)), 100, 1)
    b, _ = drive(LinTS(3, 0.5, np.random.default_rng(9)), 100, 1)
    assert a == b


def test_suplinucb_cold_start_records_level_one():
    pol = SupLinUCB(3, 1000, alpha=0.8)
    X = contexts(np.random.default_rng(0))
    pol.select(X)
    assert pol._pending_level == 0
    pol.update(X, 0, 0.1)
    assert pol.recorded[0] == [1]


def test_suplinucb_num_levels():
    assert SupLinUCB(2, 1024).num_levels == 10
    assert SupLinUCB(2, 1000).num_levels == 10
    assert SupLinUCB(2, 1).num_levels == 1


def test_suplinucb_partition_and_level_updates():
    pol = SupLinUCB(3, 2000, alpha=0.5)
    _, hist = drive(pol, 2000, 4)
    rounds = sorted(sum(pol.recorded, []) + pol.exploit_rounds)
    assert rounds == list(range(1, 2001))
    sets = [set(r) for r in pol.recorded]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            assert not sets[i] & sets[j]
    for s, recorded in enumerate(pol.recorded):
        A = np.eye(3)
        for t in recorded:
            X, a, _ = hist[t - 1]
            A += np.outer(X[a], X[a])
        np.testing.assert_allclose(pol.levels[s].A, A, atol=1e-10)
        assert pol.levels[s].n == len(recorded)


def test_suplinucb_exploit_round_updates_nothing():
    pol = SupLinUCB(2, 4, alpha=0.01)  # widths 0.01 <= 1/sqrt(4)
    X = np.eye(2)
    pol.select(X)
    pol.update(X, 0, 1.0)
    assert pol.exploit_rounds == [1]
    assert all(lv.n == 0 for lv in pol.levels)


def test_suplinucb_level_overflow():
    # unreachable with a consistent horizon; shrink the threshold after construction to force it
    pol = SupLinUCB(2, 4, alpha=0.1)
    pol.T = 10**12
    with pytest.raises(InternalInvariantError):
        pol.select(np.eye(2))


def test_drts_requires_flag():
    with pytest.raises(UnsupportedConfiguration):
        DRTS(3, 5)


def test_drts_without_dr_equals_lints():
    a, _ = drive(DRTS(3, 5, 0.5, np.random.default_rng(3), dr=False, experimental=True), 100, 2)
    b, _ = drive(LinTS(3, 0.5, np.random.default_rng(3)), 100, 2)
    assert a == b


def test_drts_deterministic():
    a, _ = drive(DRTS(3, 5, 0.5, np.random.default_rng(3), experimental=True, mc_samples=10), 60, 2)
    b, _ = drive(DRTS(3, 5, 0.5, np.random.default_rng(3), experimental=True, mc_samples=10), 60, 2)
    assert a == b


def test_uniform_random_frequencies():
    pol = UniformRandom(4, np.random.default_rng(0))
    picks = np.array([pol.select(np.eye(4)) for _ in range(40_000)])
    freq = np.bincount(picks, minlength=4) / picks.size
    assert np.all(np.abs(freq - 0.25) < 4 * math.sqrt(0.25 * 0.75 / picks.size))
