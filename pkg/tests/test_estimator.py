import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from garchssm import GarchParams, GarchStateSpace, build_random_walk_plus_noise, correlation_from_rho, simulate
from garchssm.validation import check_fraction, check_positive_int, check_series, check_square_psd

FAST = dict(n_chains=2, burn_in=60, thin=2, n_keep=20, random_state=4)


@pytest.fixture(scope="module")
def series():
    spec = build_random_walk_plus_noise(2, c0=1.0)
    g = GarchParams.garch11([1.0, 0.5], [0.2, 0.1], [0.6, 0.7])
    data, _ = simulate(spec, g, correlation_from_rho(0.3), 0.1 * np.eye(2), 80, seed=2)
    y = data.y.copy()
    y[10, 1] = np.nan
    return y


@pytest.fixture(scope="module")
def fitted(series):
    return GarchStateSpace(**FAST).fit(series)


def test_params_round_trip():
    est = GarchStateSpace(burn_in=10, iw_df=12.0)
    params = est.get_params()
    assert params["burn_in"] == 10 and params["iw_df"] == 12.0
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(thin=3)
    assert est.thin == 3


def test_unfitted_methods_raise():
    with pytest.raises(NotFittedError):
        GarchStateSpace().predict()


def test_fitted_attributes(fitted, series):
    assert fitted.n_features_in_ == 2
    assert fitted.draws_.n_draws == 20
    assert fitted.states_mean_.shape == (81, 2)
    assert fitted.garch_.n == 2 and fitted.R_.shape == (2, 2)
    assert np.isfinite(fitted.waic_.waic)
    assert set(fitted.acceptance_rates_) >= {"garch[1]", "garch[2]", "W"}
    assert "alpha1[2]" in fitted.summary()


def test_predict_transform_score_shapes(fitted, series):
    assert fitted.predict().shape == (80, 2)
    assert fitted.predict_variance(series).shape == (80, 2, 2)
    z = fitted.transform()
    assert z.shape == (80, 2) and np.isnan(z[10, 1]) and np.isfinite(z[11]).all()
    assert fitted.transform(series[:30]).shape == (30, 2)
    assert np.isfinite(fitted.score(series))
    np.testing.assert_array_equal(fitted.predict(), fitted.predict(series))


def test_refit_is_deterministic(series, fitted):
    again = GarchStateSpace(**FAST).fit(series)
    np.testing.assert_array_equal(again.draws_.alpha0, fitted.draws_.alpha0)


def test_homoskedastic_benchmark(series):
    est = GarchStateSpace(heteroskedastic=False, **FAST).fit(series)
    assert est.draws_.kind == "dlm"
    assert "V[1,1]" in est.summary()


def test_one_dimensional_input_is_single_series():
    y = np.cumsum(np.random.default_rng(0).normal(size=40))
    est = GarchStateSpace(**{**FAST, "n_chains": 1}).fit(y)
    assert est.n_features_in_ == 1


def test_trend_model(series):
    est = GarchStateSpace(model_kind="trend", **{**FAST, "n_chains": 1}).fit(series[:, :1])
    assert est.W_.shape == (2, 2)


@pytest.mark.parametrize(
    "kw",
    [dict(n_chains=0), dict(thin=0), dict(n_keep=1), dict(target_accept=1.2), dict(p=0, q=0),
     dict(model_kind="arima"), dict(burn_in=-1), dict(n_jobs=1.5)],
)
def test_invalid_settings(series, kw):
    with pytest.raises(ValueError):
        GarchStateSpace(**{**FAST, **kw}).fit(series)


def test_wrong_feature_count(fitted):
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((5, 3)))


def test_check_series():
    d = check_series([[1.0, np.nan], [2.0, 3.0]])
    assert d.observed.tolist() == [[True, False], [True, True]]
    assert check_series([1.0, 2.0]).n == 1
    for bad in ([[np.inf]], np.zeros((0, 2)), [[np.nan]], np.zeros((2, 2, 2)), [["a"]]):
        with pytest.raises(ValueError):
            check_series(bad)


def test_scalar_checks():
    assert check_positive_int(3, "k") == 3
    for bad in (0, 2.0, True, "3"):
        with pytest.raises(ValueError):
            check_positive_int(bad, "k")
    assert check_fraction(0.3, "f") == 0.3
    with pytest.raises(ValueError):
        check_fraction(1.0, "f")
    assert check_fraction(1.0, "f", open_interval=False) == 1.0
    np.testing.assert_array_equal(check_square_psd(np.eye(2), 2, "W"), np.eye(2))
    for bad in ([[1, 2], [0, 1]], [[1, 2], [2, 1]], np.eye(3)):
        with pytest.raises(ValueError):
            check_square_psd(bad, 2, "W")
