import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from garchssm import (
    FilterError,
    GarchParams,
    SeriesData,
    build_local_linear_trend,
    build_observation_cov,
    build_random_walk_plus_noise,
    correlation_from_factor,
    correlation_from_rho,
    kalman_filter,
    one_step_forecasts,
    pointwise_log_predictive,
    rts_smoother,
    simulate,
)
from oracles import constant_v_filter, joint_gaussian_rwpn_loglik
from oracles import rts_smoother as rts_oracle


def _random_instance(seed, n=3, T=40, garch=True):
    rng = np.random.default_rng(seed)
    spec = build_random_walk_plus_noise(n, m0=rng.normal(size=n), c0=rng.uniform(0.5, 3.0))
    if garch:
        a = rng.uniform(0, 0.3, n)
        b = rng.uniform(0, 0.6, n)
        g = GarchParams.garch11(rng.uniform(0.5, 2, n), a, b)
    else:
        g = GarchParams.homoskedastic(rng.uniform(0.5, 2, n))
    U = np.triu(rng.normal(size=(n, n)), 1) + np.diag(rng.uniform(0.5, 1.5, n))
    _, R = correlation_from_factor(U)
    A = rng.normal(size=(n, n)) * 0.3
    W = A @ A.T + 0.05 * np.eye(n)
    data, _ = simulate(spec, g, R, W, T, seed=seed)
    return spec, g, R, W, data


def test_scalar_loglik_matches_joint_gaussian():
    y = np.array([0.3, -1.1, 0.8, 2.4, 1.9])
    m0, C0, W, V = 0.5, 2.0, 0.7, 1.3
    spec = build_random_walk_plus_noise(1, m0=m0, c0=C0)
    out = kalman_filter(y[:, None], spec, GarchParams.homoskedastic([V]), np.eye(1), [[W]])
    assert abs(out.loglik - joint_gaussian_rwpn_loglik(y, m0, C0, W, V)) < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_zero_loadings_reduce_to_constant_v_filter(seed):
    spec, g, R, W, data = _random_instance(seed, garch=False)
    out = kalman_filter(data, spec, g, R, W)
    V = build_observation_cov(np.sqrt(g.alpha0), R)
    ref = constant_v_filter(data.y, data.observed, spec.Fprime, spec.G, spec.m0, spec.C0, W, V)
    for name in ("a", "P", "m", "C", "f", "Q", "K", "pointwise"):
        np.testing.assert_allclose(getattr(out, name), ref[name], rtol=0, atol=1e-10, err_msg=name)


def test_pointwise_is_univariate_normal_density():
    spec = build_random_walk_plus_noise(1, c0=4.0)
    y = np.array([[0.5], [1.0], [-0.3], [0.2]])
    out = kalman_filter(y, spec, GarchParams.homoskedastic([0.8]), np.eye(1), [[0.3]])
    f, Q = one_step_forecasts(out)
    expect = stats.norm.logpdf(y[:, 0], f[:, 0], np.sqrt(Q[:, 0, 0]))
    np.testing.assert_allclose(pointwise_log_predictive(out), expect, atol=1e-12)
    assert out.loglik == pytest.approx(out.pointwise.sum(), abs=0)


def test_first_forecast_unwinds_initialisation():
    spec = build_local_linear_trend(2, m0=[1.0, 0.5, -2.0, 0.1], c0=1.0)
    g = GarchParams.garch11([1, 1], [0.1, 0.1], [0.5, 0.5])
    data, _ = simulate(spec, g, np.eye(2), 0.1 * np.eye(4), 10, seed=0)
    out = kalman_filter(data, spec, g, np.eye(2), 0.1 * np.eye(4))
    np.testing.assert_allclose(out.f[0], spec.Fprime @ spec.G @ spec.m0)


def test_variance_path_recursion_and_warm_up():
    spec, g, R, W, data = _random_instance(3, n=2, T=30)
    out = kalman_filter(data, spec, g, R, W)
    init = g.alpha0 / (1 - g.persistence)
    np.testing.assert_allclose(out.S2[0], g.alpha0 + (g.alpha[:, 0] + g.beta[:, 0]) * init)
    for t in range(1, data.T):
        Fm = spec.Fprime @ out.m[t]
        FCF = np.diag(spec.Fprime @ out.C[t] @ spec.Fprime.T)
        ez2 = data.y[t - 1] ** 2 - 2 * data.y[t - 1] * Fm + FCF + Fm ** 2
        expect = g.alpha0 + g.alpha[:, 0] * ez2 + g.beta[:, 0] * out.S2[t - 1]
        np.testing.assert_allclose(out.S2[t], expect, rtol=1e-12)
    assert np.all(out.S2 >= g.alpha0)


def test_moment_invariants():
    spec, g, R, W, data = _random_instance(7, n=3, T=60)
    out = kalman_filter(data, spec, g, R, W)
    for t in range(data.T):
        for M in (out.P[t], out.C[t + 1], out.Q[t]):
            np.testing.assert_array_equal(M, M.T)
        assert np.linalg.eigvalsh(out.P[t] - out.C[t + 1]).min() > -1e-10
        np.linalg.cholesky(out.C[t + 1])
    s = out.step(5)
    np.testing.assert_array_equal(s.m, out.m[5])
    np.testing.assert_array_equal(s.a, out.a[4])
    assert len(out.steps) == data.T
    with pytest.raises(IndexError):
        out.step(0)


def test_filter_is_causal():
    spec, g, R, W, data = _random_instance(11, n=2, T=50)
    full = kalman_filter(data, spec, g, R, W)
    part = kalman_filter(SeriesData(data.y[:20]), spec, g, R, W)
    for name in ("a", "P", "f", "Q", "S2", "K", "pointwise"):
        np.testing.assert_array_equal(getattr(part, name), getattr(full, name)[:20])
    np.testing.assert_array_equal(part.m, full.m[:21])
    # later data do not move earlier forecasts
    y2 = data.y.copy()
    y2[30:] = y2[30:][::-1]
    other = kalman_filter(SeriesData(y2), spec, g, R, W)
    np.testing.assert_array_equal(other.f[:31], full.f[:31])


def test_loglik_invariant_to_series_relabelling():
    spec, g, R, W, data = _random_instance(5, n=3, T=50)
    perm = np.array([2, 0, 1])
    base = kalman_filter(data, spec, g, R, W).loglik
    spec_p = build_random_walk_plus_noise(3, m0=spec.m0[perm], c0=spec.C0[np.ix_(perm, perm)])
    g_p = GarchParams(g.alpha0[perm], g.alpha[perm], g.beta[perm])
    out = kalman_filter(SeriesData(data.y[:, perm]), spec_p, g_p, R[np.ix_(perm, perm)], W[np.ix_(perm, perm)])
    assert out.loglik == pytest.approx(base, abs=1e-9)


def _masked_instance(seed):
    rng = np.random.default_rng(seed)
    spec, g, R, W, data = _random_instance(seed, n=3, T=25)
    mask = rng.random(data.y.shape) >= 0.3
    mask[rng.integers(0, data.T, 3)] = False  # a few fully missing steps
    mask[0, 0] = True
    return spec, g, R, W, SeriesData(np.where(mask, data.y, np.nan))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_missing_steps_and_gain_columns(seed):
    spec, g, R, W, data = _masked_instance(seed)
    out = kalman_filter(data, spec, g, R, W)
    for t in range(data.T):
        obs = data.observed[t]
        if not obs.any():
            assert np.array_equal(out.m[t + 1], out.a[t])
            assert np.array_equal(out.C[t + 1], out.P[t])
            assert out.pointwise[t] == 0.0
        assert np.all(out.K[t][:, ~obs] == 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_missing_data_matches_subset_oracle_for_homoskedastic(seed):
    rng = np.random.default_rng(seed)
    spec, _, R, W, data = _masked_instance(seed)
    g = GarchParams.homoskedastic(rng.uniform(0.5, 2.0, 3))
    out = kalman_filter(data, spec, g, R, W)
    V = build_observation_cov(np.sqrt(g.alpha0), R)
    ref = constant_v_filter(np.nan_to_num(data.y), data.observed, spec.Fprime, spec.G, spec.m0, spec.C0, W, V)
    for name in ("m", "C", "K", "pointwise"):
        np.testing.assert_allclose(getattr(out, name), ref[name], rtol=0, atol=1e-9, err_msg=name)


def test_extra_missingness_leaves_earlier_moments_alone():
    spec, g, R, W, data = _random_instance(2, n=3, T=40)
    base = kalman_filter(data, spec, g, R, W)
    y = data.y.copy()
    y[25:, 1] = np.nan
    y[30] = np.nan
    out = kalman_filter(SeriesData(y), spec, g, R, W)
    np.testing.assert_array_equal(out.m[:26], base.m[:26])
    np.testing.assert_array_equal(out.C[:26], base.C[:26])


def test_missing_lag_uses_forecast_variance():
    spec, g, R, W, data = _random_instance(4, n=2, T=10)
    y = data.y.copy()
    y[3, 0] = np.nan
    out = kalman_filter(SeriesData(y), spec, g, R, W)
    expect = g.alpha0[0] + g.alpha[0, 0] * out.Q[3, 0, 0] + g.beta[0, 0] * out.S2[3, 0]
    assert out.S2[4, 0] == pytest.approx(expect, rel=1e-12)


def test_forecast_interval_coverage_at_true_parameters():
    spec = build_random_walk_plus_noise(2, c0=1.0)
    g = GarchParams.garch11([1.0, 2.0], [0.2, 0.1], [0.6, 0.7])
    R = correlation_from_rho(0.4)
    W = 0.1 * np.eye(2)
    hits = []
    for seed in range(10):
        data, _ = simulate(spec, g, R, W, 500, seed=100 + seed, theta0=0.0)
        out = kalman_filter(data, build_random_walk_plus_noise(2), g, R, W)
        half = 1.96 * np.sqrt(np.diagonal(out.Q, axis1=1, axis2=2))
        hits.append(np.abs(data.y - out.f) <= half)
    cover = np.mean(hits)
    assert abs(cover - 0.95) <= 0.02, cover


def test_singular_forecast_covariance_raises_with_time_index():
    spec = build_random_walk_plus_noise(2, c0=1e-12)
    g = GarchParams.homoskedastic([1.0, 1.0])
    # an indefinite "correlation" matrix stays indefinite after the 1e-10 jitter
    R = np.array([[1.0, 2.0], [2.0, 1.0]])
    y = np.zeros((5, 2))
    with pytest.raises(FilterError) as err:
        kalman_filter(y, spec, g, R, np.zeros((2, 2)))
    assert err.value.t == 1
    # a time step whose observed block is fine passes, the failure is reported later
    y[:2, 1] = np.nan
    with pytest.raises(FilterError) as err:
        kalman_filter(y, spec, g, R, np.zeros((2, 2)))
    assert err.value.t == 3


def test_jitter_rescues_borderline_singular_covariance():
    spec = build_random_walk_plus_noise(2, c0=1e-300)
    g = GarchParams.homoskedastic([1e-300, 1e-300])
    R = np.ones((2, 2))
    out = kalman_filter(np.zeros((3, 2)), spec, g, R, np.zeros((2, 2)))
    assert np.all(np.isfinite(out.m))


def test_dimension_mismatch():
    spec = build_random_walk_plus_noise(2)
    g = GarchParams.homoskedastic([1.0, 1.0])
    with pytest.raises(ValueError):
        kalman_filter(np.zeros((4, 3)), spec, g, np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        kalman_filter(np.zeros((4, 2)), spec, g, np.eye(2), np.eye(3))


def test_rts_smoother_matches_oracle():
    spec, g, R, W, data = _random_instance(8, n=2, T=30)
    out = kalman_filter(data, spec, g, R, W)
    s, S = rts_smoother(out, spec)
    s_ref, S_ref = rts_oracle(out.a, out.P, out.m, out.C, spec.G)
    np.testing.assert_allclose(s, s_ref, atol=1e-9)
    np.testing.assert_allclose(S, S_ref, atol=1e-9)
