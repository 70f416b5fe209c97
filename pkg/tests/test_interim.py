import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcpmod_futility import mvn
from mcpmod_futility.contrasts import build_contrast_set, correlation, scaling
from mcpmod_futility.dose_models import DEFAULT_CATALOG, DoseDesign
from mcpmod_futility.errors import NoInformationRemaining, NotPositiveDefinite
from mcpmod_futility.estimates import GroupEstimates
from mcpmod_futility.interim import (
    InterimState, conditional_power, homoscedastic_state, information_fraction, interim_powers,
    pooled_estimate, predictive_power, remaining_covariance,
)

DESIGN = DoseDesign((0, 0.5, 1, 2, 4, 8), (2, 1, 1, 1, 2, 2), (28, 14, 14, 14, 28, 28))
D = np.diag(1.0 / np.asarray(DESIGN.n, dtype=float))
CS = build_contrast_set(DEFAULT_CATALOG, DESIGN)
CRIT = mvn.critical_value(correlation(CS.C, D), 0.025)


def random_pair(rng, k):
    A = rng.standard_normal((k, k))
    full = A @ A.T / k + 0.1 * np.eye(k)
    B = rng.standard_normal((k, k))
    interim = full + B @ B.T / k + 0.05 * np.eye(k)
    return full, interim


def test_remaining_homoscedastic():
    sigma, t = 0.3, 0.4
    rem = remaining_covariance(sigma**2 * D, sigma**2 * D / t)
    np.testing.assert_allclose(rem, sigma**2 * D / (1 - t), rtol=1e-12)


def test_remaining_no_information():
    with pytest.raises(NoInformationRemaining):
        remaining_covariance(D, D)
    with pytest.raises(NoInformationRemaining):
        remaining_covariance(D, 0.5 * D)


def test_remaining_two_by_two_oracle():
    full = np.array([[1.0, 0.2], [0.2, 0.5]])
    interim = np.array([[2.0, 0.5], [0.5, 1.5]])

    def inv2(m):
        a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
        return np.array([[d, -b], [-c, a]]) / (a * d - b * c)

    oracle = inv2(inv2(full) - inv2(interim))
    np.testing.assert_allclose(remaining_covariance(full, interim), oracle, rtol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_pooling_round_trip(seed, k):
    full, interim = random_pair(np.random.default_rng(seed), k)
    rem = remaining_covariance(full, interim)
    pooled = mvn.spd_inverse(mvn.spd_inverse(interim) + mvn.spd_inverse(rem))
    assert np.linalg.norm(pooled - full) / np.linalg.norm(full) < 1e-8
    t = information_fraction(full, interim)
    assert 0 < t <= 1


def test_pooled_equal_covariances_average():
    a = GroupEstimates(np.array([1.0, 2.0]), np.eye(2))
    b = GroupEstimates(np.array([3.0, 0.0]), np.eye(2))
    p = pooled_estimate(a, b)
    np.testing.assert_allclose(p.mu_hat, [2.0, 1.0])
    np.testing.assert_allclose(p.S, 0.5 * np.eye(2))


def test_pooled_homoscedastic_weights():
    rng = np.random.default_rng(0)
    t, sigma = 0.3, 0.5
    y1, y2 = rng.normal(size=6), rng.normal(size=6)
    p = pooled_estimate(GroupEstimates(y1, sigma**2 * D / t), GroupEstimates(y2, sigma**2 * D / (1 - t)))
    np.testing.assert_allclose(p.mu_hat, t * y1 + (1 - t) * y2, rtol=1e-12)
    np.testing.assert_allclose(p.S, sigma**2 * D, rtol=1e-12)


def test_pooled_vague_second_stage():
    a = GroupEstimates(np.array([0.2, -0.4, 1.0]), np.diag([0.1, 0.2, 0.3]))
    b = GroupEstimates(np.array([5.0, 5.0, 5.0]), 1e8 * np.eye(3))
    np.testing.assert_allclose(pooled_estimate(a, b).mu_hat, a.mu_hat, atol=1e-6)


def test_information_fraction_examples():
    rng = np.random.default_rng(1)
    full, _ = random_pair(rng, 4)
    assert information_fraction(full, full) == pytest.approx(1.0, abs=1e-14)
    assert information_fraction(full, 2 * full) == pytest.approx(0.5, abs=1e-14)
    assert information_fraction(0.2 * D, 0.2 * D / 0.35) == pytest.approx(0.35, abs=1e-14)
    # diagonal: ratio of geometric means of the variances
    v_full, v_int = np.array([1.0, 2.0, 4.0]), np.array([3.0, 3.0, 9.0])
    gm = lambda v: np.exp(np.mean(np.log(v)))
    assert information_fraction(np.diag(v_full), np.diag(v_int)) == pytest.approx(gm(v_full) / gm(v_int))


def test_homoscedastic_state():
    st_ = homoscedastic_state(np.zeros(2), 1.0, (10, 10), 0.5)
    np.testing.assert_allclose(st_.stage1.S, np.diag([0.2, 0.2]))
    assert st_.info_fraction == 0.5
    built = InterimState.build(st_.stage1, st_.final_cov)
    assert built.info_fraction == pytest.approx(0.5, abs=1e-14)
    np.testing.assert_allclose(built.remaining_cov, st_.remaining_cov, rtol=1e-12)
    with pytest.raises(ValueError):
        homoscedastic_state(np.zeros(2), 1.0, (10, 10), 1.0)


def test_pooled_test_vector_matches_closed_form():
    rng = np.random.default_rng(2)
    t, sigma = 0.4, 0.3
    ybar1, ybar2 = rng.normal(size=6) * 0.1, rng.normal(size=6) * 0.1
    state = homoscedastic_state(ybar1, sigma, DESIGN, t)
    pooled = pooled_estimate(state.stage1, GroupEstimates(ybar2, state.remaining_cov))
    P = scaling(CS.C, state.final_cov)
    direct = P * (CS.C @ (t * ybar1 + (1 - t) * ybar2))
    np.testing.assert_allclose(P * (CS.C @ pooled.mu_hat), direct, rtol=1e-10, atol=1e-12)


def _closed_form(ybar, sigma, t, mu_tilde=None):
    """Homoscedastic single-visit formulas for predictive and conditional power."""
    P = scaling(CS.C, sigma**2 * D)
    PC = P[:, None] * CS.C
    if mu_tilde is None:
        mean, cov = PC @ ybar, PC @ (sigma**2 * (1 - t) / t * D) @ PC.T
    else:
        mean = PC @ (t * ybar + (1 - t) * mu_tilde)
        cov = PC @ (sigma**2 * (1 - t) ** 2 * (1 / (1 - t)) * D) @ PC.T
    p = mvn.equicoordinate_prob(mean, cov, CRIT, np.random.default_rng(5))
    return 1 - p.value, p.std_error


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.9))
def test_reduction_to_homoscedastic(seed, t):
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0.2, 1.0)
    ybar = rng.normal(size=6) * 0.15
    mu_tilde = rng.normal(size=6) * 0.15
    state = InterimState.build(GroupEstimates(ybar, sigma**2 * D / t), sigma**2 * D)
    pp = predictive_power(state, CS, crit=CRIT, rng=np.random.default_rng(5))
    ref, se = _closed_form(ybar, sigma, t)
    assert abs(pp.value - ref) <= 1e-6 + 3 * max(se, pp.std_error)
    cp = conditional_power(state, CS, mu_tilde, crit=CRIT, rng=np.random.default_rng(5))
    ref, se = _closed_form(ybar, sigma, t, mu_tilde)
    assert abs(cp.value - ref) <= 1e-6 + 3 * max(se, cp.std_error)


def test_predictive_power_huge_effect():
    ybar = np.array([0, 0, 0, 0, 0, 5.0])
    state = homoscedastic_state(ybar, 0.3, DESIGN, 0.5)
    assert predictive_power(state, CS, 0.025).value >= 0.999


def test_conditional_power_limit_is_interim_decision():
    rng = np.random.default_rng(3)
    sigma = 0.3
    for scale in (0.0, 0.3):
        ybar = np.array([0, 0.1, 0.2, 0.3, 0.4, 0.5]) * scale + rng.normal(size=6) * 0.001
        S1 = sigma**2 * D
        final = mvn.spd_inverse(mvn.spd_inverse(S1) + mvn.spd_inverse(1e8 * S1))
        state = InterimState.build(GroupEstimates(ybar, S1), final)
        T = scaling(CS.C, final) * (CS.C @ ybar)
        decision = float(T.max() > CRIT)
        cp = conditional_power(state, CS, ybar, crit=CRIT)
        assert abs(cp.value - decision) < 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_in_upward_shift(seed):
    rng = np.random.default_rng(seed)
    ybar = rng.normal(size=6) * 0.1
    state = homoscedastic_state(ybar, 0.4, DESIGN, 0.4)
    mu_t = rng.normal(size=6) * 0.1
    up = np.r_[0, np.ones(5)]
    pps, cps = [], []
    for s in np.linspace(0, 0.3, 7):
        st_s = homoscedastic_state(ybar + s * up, 0.4, DESIGN, 0.4)
        pps.append(predictive_power(st_s, CS, crit=CRIT, rng=np.random.default_rng(1)).value)
        cps.append(conditional_power(state, CS, mu_t + s * up, crit=CRIT, rng=np.random.default_rng(1)).value)
    assert np.all(np.diff(pps) >= -2e-3)
    assert np.all(np.diff(cps) >= -2e-3)


def test_interim_powers_variants():
    ybar = np.array([0.05, 0.08, 0.1, 0.12, 0.15, 0.16])
    state = homoscedastic_state(ybar, 0.3, DESIGN, 0.3)
    planned = np.array([0, 0.03, 0.05, 0.08, 0.1, 0.12])
    res = interim_powers(state, CS, planned, crit=CRIT, rng=np.random.default_rng(0))
    cp_planned = conditional_power(state, CS, ybar[0] + planned, crit=CRIT, rng=np.random.default_rng(0))
    assert res.cond_planned == pytest.approx(cp_planned.value, abs=3 * cp_planned.std_error + 1e-12)
    for v in (res.predictive, res.cond_planned, res.cond_interim):
        assert 0 <= v <= 1
    assert all(e <= 5e-4 for e in res.errors)


def _mc_oracle(state, mu_second, cov_second, n, rng):
    """Draw the second stage, pool with the interim estimate, run the final test."""
    PC = scaling(CS.C, state.final_cov)[:, None] * CS.C
    W1 = state.final_cov @ mvn.spd_inverse(state.stage1.S)
    W2 = state.final_cov @ mvn.spd_inverse(state.remaining_cov)
    draws = mvn.mvn_sample(mu_second, cov_second, rng, size=n)
    pooled = W1 @ state.stage1.mu_hat + draws @ W2.T
    rej = (pooled @ PC.T).max(axis=1) > CRIT
    return rej.mean(), rej.std() / np.sqrt(n)


def test_monte_carlo_oracle_small():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((6, 6)) * 0.01
    S1 = 0.09 * D / 0.4 + A @ A.T
    final = 0.09 * D
    ybar = np.array([0, 0.02, 0.04, 0.06, 0.07, 0.08])
    state = InterimState.build(GroupEstimates(ybar, S1), final)
    pp = predictive_power(state, CS, crit=CRIT)
    ref, se = _mc_oracle(state, ybar, S1 + state.remaining_cov, 50_000, rng)
    assert abs(pp.value - ref) <= 3 * np.hypot(se, pp.std_error)
    mu_t = ybar + 0.03
    cp = conditional_power(state, CS, mu_t, crit=CRIT)
    ref, se = _mc_oracle(state, mu_t, state.remaining_cov, 50_000, rng)
    assert abs(cp.value - ref) <= 3 * np.hypot(se, cp.std_error)


def test_group_estimates_validation():
    with pytest.raises(ValueError):
        GroupEstimates(np.zeros(3), np.eye(2))
    with pytest.raises(NotPositiveDefinite):
        GroupEstimates(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
