"""WAIC, model comparison, posterior summaries and residual diagnostics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .filtering import kalman_filter
from .model import GarchParams, ModelSpec, SeriesData

__all__ = [
    "WaicReport",
    "PosteriorSummary",
    "ResidualReport",
    "Comparison",
    "waic",
    "compare_models",
    "ergodic_means",
    "summarize",
    "point_estimates",
    "residual_analysis",
    "dynamic_variance_path",
    "state_path",
    "variance_path_from_states",
]


@dataclass(frozen=True)
class WaicReport:
    """``waic = lppd - p_waic``; larger is better (no deviance scaling)."""

    lppd: float
    p_waic: float
    waic: float
    per_point: np.ndarray

    @property
    def T(self) -> int:
        return self.per_point.shape[0]


def waic(pointwise_lp) -> WaicReport:
    """WAIC from a (draws, T) matrix of pointwise log predictive densities.

    Each column is one time step with the latent states integrated out.
    """
    lp = np.asarray(pointwise_lp, dtype=float)
    if lp.ndim != 2:
        raise ValueError("pointwise_lp must be a (draws, T) matrix")
    S = lp.shape[0]
    if S < 2:
        raise ValueError("WAIC needs at least 2 posterior draws")
    if not np.all(np.isfinite(lp)):
        raise ValueError("pointwise_lp contains non-finite entries")
    # centring on the column maximum makes constant columns exact
    top = lp.max(axis=0)
    dev = lp - top
    log_mean = top + np.log(np.exp(dev).mean(axis=0))
    mean_log = top + dev.mean(axis=0)
    penalty = 2.0 * (log_mean - mean_log)
    p_waic = float(penalty.sum())
    if p_waic < -0.01:
        warnings.warn(f"negative effective number of parameters ({p_waic:.4f})", RuntimeWarning, stacklevel=2)
    per_point = log_mean - penalty
    lppd = float(log_mean.sum())
    return WaicReport(lppd=lppd, p_waic=p_waic, waic=lppd - p_waic, per_point=per_point)


@dataclass(frozen=True)
class Comparison:
    """Models ordered best first; ``differences[i][j] = waic_i - waic_j`` in ranking order."""

    names: list
    waics: list
    differences: np.ndarray

    @property
    def best(self) -> str:
        return self.names[0]

    @property
    def tie(self) -> bool:
        return len(self.waics) > 1 and self.waics[0] == self.waics[1]


def compare_models(reports) -> Comparison:
    """Rank ``[(name, WaicReport), ...]`` by decreasing WAIC; ties keep name order."""
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("need at least two models to compare")
    lengths = {rep.T for _, rep in reports}
    if len(lengths) != 1:
        raise ValueError(f"reports cover different data lengths: {sorted(lengths)}")
    ranked = sorted(reports, key=lambda item: (-item[1].waic, item[0]))
    w = np.array([rep.waic for _, rep in ranked])
    return Comparison(
        names=[name for name, _ in ranked],
        waics=w.tolist(),
        differences=w[:, None] - w[None, :],
    )


def ergodic_means(draws) -> np.ndarray:
    """Running means along axis 0 (``trace[k-1]`` is the mean of the first k draws)."""
    x = np.asarray(draws, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("no draws")
    k = np.arange(1, x.shape[0] + 1).reshape((-1,) + (1,) * (x.ndim - 1))
    return np.cumsum(x, axis=0) / k


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    median: float
    sd: float
    ci95: tuple


def _summary(x) -> PosteriorSummary:
    x = np.asarray(x, dtype=float)
    lo, hi = np.quantile(x, [0.025, 0.975])
    return PosteriorSummary(
        mean=float(x.mean()),
        median=float(np.median(x)),
        sd=float(x.std(ddof=1)) if x.size > 1 else 0.0,
        ci95=(float(lo), float(hi)),
    )


def summarize(draws) -> dict[str, PosteriorSummary]:
    """Mean, median, sd and equal-tailed 95% interval per scalar parameter.

    Accepts a :class:`~garchssm.sampling.PosteriorDraws` or a mapping from
    parameter name to a 1-d array of draws.
    """
    params = draws.scalar_parameters() if hasattr(draws, "scalar_parameters") else dict(draws)
    if not params:
        raise ValueError("no parameters to summarise")
    out = {}
    for name, x in params.items():
        if np.size(x) == 0:
            raise ValueError(f"no draws for {name}")
        out[name] = _summary(x)
    return out


def point_estimates(draws):
    """Posterior medians ``(garch, R, W)`` used for residual diagnostics."""
    garch = GarchParams(
        np.median(draws.alpha0, axis=0), np.median(draws.alpha, axis=0), np.median(draws.beta, axis=0)
    )
    R = np.median(draws.R, axis=0)
    d = np.sqrt(np.diag(R))
    R = R / np.outer(d, d)
    W = np.median(draws.W, axis=0)
    W = 0.5 * (W + W.T)
    return garch, R, W


def state_path(draws, level: float = 0.95):
    """Posterior mean and equal-tailed band of ``theta_{0:T}``."""
    if draws.states is None:
        raise ValueError("draws were stored without state paths")
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws.states, [a, 1.0 - a], axis=0)
    return draws.states.mean(axis=0), lo, hi


def variance_path_from_states(garch: GarchParams, residuals, observed=None) -> np.ndarray:
    """Run the variance recursion on given errors ``z_t`` (T, n).

    Missing errors contribute their own conditional variance as ``E[z^2]``.
    """
    z = np.asarray(residuals, float)
    T, n = z.shape
    observed = np.isfinite(z) if observed is None else np.asarray(observed, bool)
    p, q = garch.p, garch.q
    init = garch.initial_variance()
    z2 = np.empty((T, n))
    s2 = np.empty((T, n))
    for t in range(T):
        v = garch.alpha0.copy()
        for j in range(p):
            v += garch.alpha[:, j] * (z2[t - 1 - j] if t - 1 - j >= 0 else init)
        for j in range(q):
            v += garch.beta[:, j] * (s2[t - 1 - j] if t - 1 - j >= 0 else init)
        s2[t] = v
        z2[t] = np.where(observed[t], np.nan_to_num(z[t]) ** 2, v)
    return s2


def dynamic_variance_path(draws, data: SeriesData = None, spec: ModelSpec = None, level: float = 0.95,
                          source: str = "filter"):
    """Posterior mean and band of the conditional standard deviations ``sigma_{i,t}``.

    ``source="filter"`` takes quantiles of the filter's ``sqrt(S2)`` path
    stored with each draw, recomputing it when no path was stored (``data``
    and ``spec`` are then required). ``source="states"`` instead runs each
    draw's variance recursion on the errors implied by that draw's sampled
    states. Returns ``(mean, lower, upper)``, each (T, n).
    """
    if source == "states":
        if draws.states is None or data is None:
            raise ValueError("state-based variance paths need stored states and the data")
        Fp = np.eye(draws.n) if spec is None else spec.Fprime
        sd = np.empty((draws.n_draws, data.T, data.n))
        for s in range(draws.n_draws):
            z = data.y - draws.states[s, 1:] @ Fp.T
            sd[s] = np.sqrt(variance_path_from_states(draws.garch(s), z, data.observed))
    elif source == "filter":
        if draws.S2 is not None:
            sd = np.sqrt(draws.S2)
        else:
            if data is None or spec is None:
                raise ValueError("no stored variance paths; pass data and spec to recompute them")
            sd = np.stack([
                np.sqrt(kalman_filter(data, spec, draws.garch(s), draws.R[s], draws.W[s]).S2)
                for s in range(draws.n_draws)
            ])
    else:
        raise ValueError("source must be 'states' or 'filter'")
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(sd, [a, 1.0 - a], axis=0)
    return sd.mean(axis=0), lo, hi


@dataclass
class ResidualReport:
    """Raw and variance-standardised residuals (NaN where unobserved).

    ``qq[i]`` is a pair ``(theoretical, empirical)`` of ascending quantiles
    for series ``i`` and ``ks[i]`` the Kolmogorov-Smirnov ``(statistic,
    p-value)`` of the standardised residuals against N(0, 1).
    """

    raw: np.ndarray
    standardized: np.ndarray
    sigma: np.ndarray
    qq: list
    ks: list


def _qq_pairs(x):
    x = np.sort(x[np.isfinite(x)])
    m = x.size
    theo = stats.norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return theo, x


def residual_analysis(data: SeriesData, spec: ModelSpec, garch: GarchParams, R, W, states,
                      sigma2=None) -> ResidualReport:
    """Heteroskedasticity-adjusted residuals ``(y_t - F' theta_t) / sigma_t``.

    ``states`` is a point estimate of ``theta_{0:T}`` (T + 1 rows) or of
    ``theta_{1:T}`` (T rows). The standardising path ``sigma2`` defaults to the
    variance recursion run on the residuals themselves with the given GARCH
    parameters.
    """
    states = np.asarray(states, float)
    if states.shape[0] == data.T + 1:
        states = states[1:]
    raw = np.where(data.observed, data.y - states @ spec.Fprime.T, np.nan)
    if sigma2 is None:
        sigma2 = variance_path_from_states(garch, raw, data.observed)
    sigma = np.sqrt(np.asarray(sigma2, float))
    standardized = raw / sigma
    qq, ks = [], []
    for i in range(data.n):
        col = standardized[:, i]
        qq.append(_qq_pairs(col))
        obs = col[np.isfinite(col)]
        if obs.size:
            res = stats.kstest(obs, "norm")
            ks.append((float(res.statistic), float(res.pvalue)))
        else:
            ks.append((float("nan"), float("nan")))
    return ResidualReport(raw=raw, standardized=standardized, sigma=sigma, qq=qq, ks=ks)
