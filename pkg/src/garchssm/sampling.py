"""Posterior simulation: FFBS, conjugate covariance draws and Metropolis-within-Gibbs."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .filtering import FilterError, FilterOutput, run_filter
from .model import GarchParams, ModelSpec, SeriesData

logger = logging.getLogger(__name__)

__all__ = [
    "PriorSpec",
    "McmcConfig",
    "PosteriorDraws",
    "ChainError",
    "ffbs",
    "sample_W_conjugate",
    "sample_V_conjugate",
    "mh_update_garch",
    "mh_update_correlation",
    "mh_update_W",
    "impute_missing",
    "run_chain",
    "run_chains_parallel",
    "derived_state_correlation",
    "log_prior_garch",
    "log_prior_correlation",
]


class ChainError(RuntimeError):
    """A chain hit a numerical failure it could not recover from."""

    def __init__(self, message, iteration=None, block=None, chain=None):
        super().__init__(message)
        self.iteration = iteration
        self.block = block
        self.chain = chain


@dataclass
class PriorSpec:
    """Hyper-parameters.

    ``iw_scale`` may be a matrix or a scalar multiplying the identity; ``None``
    means ``I``. A ``10 I`` scale dominates the likelihood for small state
    variances (the posterior of ``W = 0.1 I`` at T = 1000 lands near 0.27), so
    the default keeps 10 degrees of freedom with a unit scale. The
    ``obs_iw_*`` pair is the prior on a constant ``V`` for the homoskedastic
    benchmark; its scale defaults to ``10 I``.
    """

    cauchy_scale_alpha0: float = 1.0
    cauchy_scale_ab: float = 1.0
    cauchy_scale_udiag: float = 1.0
    normal_sd_uoffdiag: float = 1.0
    iw_df: float = 10.0
    iw_scale: np.ndarray = None
    rho_uniform: bool = True
    obs_iw_df: float = 10.0
    obs_iw_scale: np.ndarray = None

    def __post_init__(self):
        for name in ("cauchy_scale_alpha0", "cauchy_scale_ab", "cauchy_scale_udiag", "normal_sd_uoffdiag"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def _scale(df, scale, dim, name, default=1.0):
        if df <= dim - 1:
            raise ValueError(f"{name} degrees of freedom must exceed {dim - 1}")
        if scale is None:
            scale = default
        if np.ndim(scale) == 0:
            S = float(scale) * np.eye(dim)
        else:
            S = np.atleast_2d(np.asarray(scale, float))
        if S.shape != (dim, dim):
            raise ValueError(f"{name} scale must be {dim} x {dim}")
        np.linalg.cholesky(S)
        return S

    def W_prior(self, r):
        return self.iw_df, self._scale(self.iw_df, self.iw_scale, r, "state IW")

    def V_prior(self, n):
        return self.obs_iw_df, self._scale(self.obs_iw_df, self.obs_iw_scale, n, "observation IW", default=10.0)


@dataclass
class McmcConfig:
    """Run-length and tuning settings.

    ``n_keep`` is the total number of retained draws across all chains; each
    chain runs ``burn_in + thin * n_keep / n_chains`` iterations.
    """

    n_chains: int = 4
    burn_in: int = 20000
    thin: int = 50
    n_keep: int = 8000
    proposal_sd: dict = field(default_factory=lambda: {"garch": 0.05, "corr": 0.05})
    adapt: bool = True
    target_accept: float = 0.3
    seed: int = 0
    store_states: bool = True
    marginal_W: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in < 0 or self.n_keep < 0:
            raise ValueError("burn_in and n_keep must be nonnegative")
        for k, v in self.proposal_sd.items():
            if not v > 0:
                raise ValueError(f"proposal_sd[{k!r}] must be positive")

    def keep_per_chain(self) -> list[int]:
        base, extra = divmod(self.n_keep, self.n_chains)
        return [base + (1 if c < extra else 0) for c in range(self.n_chains)]

    def chain_seeds(self) -> list[np.random.SeedSequence]:
        return np.random.SeedSequence(self.seed).spawn(self.n_chains)


@dataclass
class PosteriorDraws:
    """Retained draws, stacked over chains.

    ``kind`` is ``"garch"`` or ``"dlm"`` (homoskedastic benchmark, where ``V``
    holds the observation covariance and the GARCH arrays describe it as
    ``alpha0 = diag(V)`` with zero loadings). ``corr`` holds the sampled
    correlation parameters: ``rho`` for a bivariate Uniform(-1, 1) model,
    otherwise the unnormalised upper-triangular entries (row-major, last
    diagonal fixed at 1).
    """

    kind: str
    alpha0: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    R: np.ndarray
    corr: np.ndarray
    W: np.ndarray
    pointwise_lp: np.ndarray
    chain_id: np.ndarray
    V: np.ndarray = None
    states: np.ndarray = None
    S2: np.ndarray = None
    f: np.ndarray = None
    imputed: np.ndarray = None
    acceptance_rates: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.alpha0.shape[0]

    @property
    def n(self) -> int:
        return self.alpha0.shape[1]

    @property
    def loglik(self) -> np.ndarray:
        return self.pointwise_lp.sum(axis=1)

    def garch(self, s: int) -> GarchParams:
        return GarchParams(self.alpha0[s], self.alpha[s], self.beta[s])

    def select(self, idx) -> "PosteriorDraws":
        idx = np.asarray(idx)
        kw = {}
        for name in _ARRAY_FIELDS:
            v = getattr(self, name)
            kw[name] = None if v is None else v[idx]
        return PosteriorDraws(kind=self.kind, acceptance_rates=dict(self.acceptance_rates),
                              failures=dict(self.failures), **kw)

    @classmethod
    def concatenate(cls, parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        if not parts:
            raise ValueError("nothing to concatenate")
        kw = {}
        for name in _ARRAY_FIELDS:
            vals = [getattr(p, name) for p in parts]
            kw[name] = None if any(v is None for v in vals) else np.concatenate(vals, axis=0)
        rates = {}
        for p in parts:
            for k, v in p.acceptance_rates.items():
                rates.setdefault(k, []).append(v)
        rates = {k: float(np.mean(v)) for k, v in rates.items()}
        failures = {}
        for p in parts:
            failures.update(p.failures)
        return cls(kind=parts[0].kind, acceptance_rates=rates, failures=failures, **kw)

    def scalar_parameters(self, include_raw: bool = False) -> dict[str, np.ndarray]:
        """Flatten to ``{name: (S,) array}`` with 1-based names such as ``alpha0[2]``."""
        out = {}
        n = self.n
        iu = [(i, j) for i in range(n) for j in range(i + 1, n)]
        if self.kind == "garch":
            for i in range(n):
                out[f"alpha0[{i + 1}]"] = self.alpha0[:, i]
                for j in range(self.alpha.shape[2]):
                    out[f"alpha{j + 1}[{i + 1}]"] = self.alpha[:, i, j]
                for j in range(self.beta.shape[2]):
                    out[f"beta{j + 1}[{i + 1}]"] = self.beta[:, i, j]
            for i, j in iu:
                out[f"rho[{i + 1},{j + 1}]"] = self.R[:, i, j]
        else:
            for i in range(n):
                for j in range(i, n):
                    out[f"V[{i + 1},{j + 1}]"] = self.V[:, i, j]
            for i, j in iu:
                out[f"rho_obs[{i + 1},{j + 1}]"] = self.R[:, i, j]
        r = self.W.shape[1]
        for i in range(r):
            for j in range(i, r):
                out[f"W[{i + 1},{j + 1}]"] = self.W[:, i, j]
        if r >= 2:
            rs = derived_state_correlation(self.W)
            for i in range(r):
                for j in range(i + 1, r):
                    out[f"rho_s[{i + 1},{j + 1}]"] = rs[:, i, j]
        if include_raw and self.kind == "garch" and self.corr is not None:
            for k, name in enumerate(corr_param_names(n, self.corr.shape[1])):
                out[name] = self.corr[:, k]
        return out


_ARRAY_FIELDS = ("alpha0", "alpha", "beta", "R", "corr", "W", "pointwise_lp", "chain_id",
                 "V", "states", "S2", "f", "imputed")


def corr_param_names(n: int, k: int) -> list[str]:
    if k == 1 and n == 2:
        return ["rho_raw[1,2]"]
    return [f"u[{i + 1},{j + 1}]" for i in range(n - 1) for j in range(i, n)][:k]


# ---------------------------------------------------------------- priors


def _log_halfcauchy(x, scale):
    return -np.log1p((np.asarray(x) / scale) ** 2)


def log_prior_garch(vec, prior: PriorSpec) -> float:
    """Unnormalised log prior of one series' ``(alpha0, alpha..., beta...)``.

    Independent half-Cauchy densities truncated to ``sum(alpha) + sum(beta) < 1``.
    """
    vec = np.asarray(vec, float)
    if not GarchParams.in_support(vec):
        return -math.inf
    return float(_log_halfcauchy(vec[0], prior.cauchy_scale_alpha0) + _log_halfcauchy(vec[1:], prior.cauchy_scale_ab).sum())


def _corr_mode(n: int, prior: PriorSpec) -> str:
    if n == 1:
        return "none"
    if n == 2 and prior.rho_uniform:
        return "rho"
    return "factor"


def _factor_layout(n):
    diag_mask = []
    for i in range(n - 1):
        diag_mask.extend([True] + [False] * (n - 1 - i))
    return np.array(diag_mask, dtype=bool)


def log_prior_correlation(params, n: int, prior: PriorSpec) -> float:
    params = np.asarray(params, float)
    mode = _corr_mode(n, prior)
    if mode == "none":
        return 0.0
    if mode == "rho":
        return 0.0 if -1.0 < params[0] < 1.0 else -math.inf
    diag = _factor_layout(n)
    d = params[diag]
    if np.any(d <= 0):
        return -math.inf
    off = params[~diag]
    return float(_log_halfcauchy(d, prior.cauchy_scale_udiag).sum() - 0.5 * np.sum((off / prior.normal_sd_uoffdiag) ** 2))


def _corr_blocks(n, prior):
    """One Metropolis block per free row of the factor (a single block for ``rho``)."""
    if _corr_mode(n, prior) == "rho":
        return [("corr", np.array([0]))]
    blocks, start = [], 0
    for i in range(n - 1):
        width = n - i
        blocks.append((f"corr[{i + 1}]", np.arange(start, start + width)))
        start += width
    return blocks


def correlation_matrix(params, n: int, prior: PriorSpec) -> np.ndarray:
    """Correlation matrix implied by sampled correlation parameters."""
    mode = _corr_mode(n, prior)
    if mode == "none":
        return np.ones((1, 1))
    params = np.asarray(params, float)
    if mode == "rho":
        rho = params[0]
        return np.array([[1.0, rho], [rho, 1.0]])
    U = np.zeros((n, n))
    iu = np.triu_indices(n - 1, 0, n)  # rows 0..n-2, cols >= row
    U[iu] = params
    U[n - 1, n - 1] = 1.0
    U /= np.linalg.norm(U, axis=1)[:, None]
    R = U @ U.T
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def _draw_corr_init(n, prior, rng):
    mode = _corr_mode(n, prior)
    if mode == "none":
        return np.zeros(0)
    if mode == "rho":
        return np.array([rng.uniform(-1.0, 1.0)])
    diag = _factor_layout(n)
    out = np.empty(diag.size)
    out[diag] = np.abs(prior.cauchy_scale_udiag * rng.standard_cauchy(diag.sum()))
    out[~diag] = prior.normal_sd_uoffdiag * rng.standard_normal((~diag).sum())
    return out


def _draw_garch_init(n, p, q, prior, rng, max_tries=10000):
    a0 = np.abs(prior.cauchy_scale_alpha0 * rng.standard_cauchy(n))
    a0 = np.maximum(a0, 1e-3)
    alpha = np.empty((n, p))
    beta = np.empty((n, q))
    for i in range(n):
        for _ in range(max_tries):
            v = np.abs(prior.cauchy_scale_ab * rng.standard_cauchy(p + q))
            if v.sum() < 1.0:
                break
        else:
            v = np.full(p + q, 0.5 / max(p + q, 1))
        alpha[i], beta[i] = v[:p], v[p:]
    return GarchParams(a0, alpha, beta)


# ---------------------------------------------------------------- Gibbs pieces


def ffbs(output: FilterOutput, spec: ModelSpec, rng, size=None) -> np.ndarray:
    """Draw ``theta_{0:T}`` from its joint smoothing distribution.

    Returns shape (T + 1, r), or (size, T + 1, r) when ``size`` is given.
    """
    T, r = output.T, spec.r
    S = 1 if size is None else int(size)
    eps = rng.standard_normal((S, T + 1, r))
    out = np.empty_like(eps)
    status, t = _kernels.ffbs_kernel(spec.G, output.a, output.P, output.m, output.C, eps, out)
    if status != _kernels.OK:
        raise FilterError(f"predicted state covariance P_t is not positive definite at t={t + 1}", t=t + 1)
    return out[0] if size is None else out


def _iw_draw(df, scale, rng):
    return np.atleast_2d(stats.invwishart.rvs(df=df, scale=scale, random_state=rng))


def sample_W_conjugate(states, spec: ModelSpec, prior: PriorSpec, rng) -> np.ndarray:
    """Draw ``W | theta_{0:T} ~ IW(df + T, scale + sum_t w_t w_t^T)``."""
    states = np.atleast_2d(np.asarray(states, float))
    df, S0 = prior.W_prior(spec.r)
    innov = states[1:] - states[:-1] @ spec.G.T
    W = _iw_draw(df + innov.shape[0], S0 + innov.T @ innov, rng)
    return 0.5 * (W + W.T)


def sample_V_conjugate(y_complete, states, spec: ModelSpec, prior: PriorSpec, rng) -> np.ndarray:
    """Draw a constant observation covariance given states and gap-filled data."""
    df, S0 = prior.V_prior(spec.n)
    resid = y_complete - states[1:] @ spec.Fprime.T
    V = _iw_draw(df + resid.shape[0], S0 + resid.T @ resid, rng)
    return 0.5 * (V + V.T)


def derived_state_correlation(W) -> np.ndarray:
    """``W_ij / sqrt(W_ii W_jj)`` for one matrix (r, r) or a stack (S, r, r)."""
    W = np.asarray(W, float)
    d = np.sqrt(np.diagonal(W, axis1=-2, axis2=-1))
    return W / (d[..., :, None] * d[..., None, :])


def impute_missing(states, spec: ModelSpec, sigma2, R, data: SeriesData, rng) -> np.ndarray:
    """Draw unobserved cells from ``y_t | theta_t, observed part of y_t``.

    ``sigma2`` is the (T, n) conditional variance path. Returns the draws in
    the row-major order of ``np.nonzero(~data.observed)``.
    """
    miss = ~data.observed
    if not miss.any():
        return np.zeros(0)
    R = np.asarray(R, float)
    sigma2 = np.broadcast_to(np.asarray(sigma2, float), data.y.shape)
    mean = states[1:] @ spec.Fprime.T
    out = []
    for t in np.flatnonzero(miss.any(axis=1)):
        sd = np.sqrt(sigma2[t])
        V = sd[:, None] * R * sd[None, :]
        mi = miss[t]
        ob = ~mi
        mu = mean[t, mi]
        cov = V[np.ix_(mi, mi)]
        if ob.any():
            gain = np.linalg.solve(V[np.ix_(ob, ob)], V[np.ix_(ob, mi)]).T
            mu = mu + gain @ (data.y[t, ob] - mean[t, ob])
            cov = cov - gain @ V[np.ix_(ob, mi)]
        L = np.linalg.cholesky(0.5 * (cov + cov.T) + 1e-12 * np.eye(cov.shape[0]))
        out.append(mu + L @ rng.standard_normal(mu.size))
    return np.concatenate(out)


# ---------------------------------------------------------------- Metropolis steps


class _Target:
    """Filter-based marginal likelihood for a fixed data set and model."""

    def __init__(self, data: SeriesData, spec: ModelSpec, prior: PriorSpec):
        self.data = data
        self.spec = spec
        self.prior = prior
        self.y = np.ascontiguousarray(np.where(data.observed, data.y, 0.0))
        self.obs = np.ascontiguousarray(data.observed)

    def filter(self, garch: GarchParams, R, W) -> FilterOutput:
        return run_filter(
            self.y, self.obs, self.spec, garch.alpha0, np.ascontiguousarray(garch.alpha),
            np.ascontiguousarray(garch.beta), np.ascontiguousarray(R), np.ascontiguousarray(W),
            garch.initial_variance(),
        )


def _propose(current, step, rng):
    step = np.asarray(step, float)
    eps = rng.standard_normal(current.size)
    if step.ndim == 2:
        return current + step @ eps
    return current + step * eps


def _mh_accept(log_ratio, rng) -> bool:
    return bool(log_ratio >= 0 or math.log(rng.uniform()) < log_ratio)


def mh_update_garch(garch: GarchParams, i: int, data: SeriesData, spec: ModelSpec, R, W,
                    prior: PriorSpec, step, rng, current: FilterOutput = None, _target=None):
    """Random-walk Metropolis update of series ``i``'s GARCH vector.

    ``step`` is a scalar or per-component proposal sd, or a lower-triangular
    proposal factor. The target is the filter likelihood (states integrated
    out) times the prior; proposals outside the support are rejected without
    evaluating the likelihood.

    Returns ``(garch, accepted, filter_output)`` where ``filter_output``
    corresponds to the returned parameters.
    """
    target = _target or _Target(data, spec, prior)
    if current is None:
        current = target.filter(garch, R, W)
    vec = garch.series_vector(i)
    prop = _propose(vec, step, rng)
    lp_prop = log_prior_garch(prop, prior)
    if not math.isfinite(lp_prop):
        return garch, False, current
    new = garch.with_series(i, prop)
    try:
        out = target.filter(new, R, W)
    except FilterError:
        return garch, False, current
    log_ratio = out.loglik + lp_prop - current.loglik - log_prior_garch(vec, prior)
    if _mh_accept(log_ratio, rng):
        return new, True, out
    return garch, False, current


def mh_update_correlation(params, garch: GarchParams, data: SeriesData, spec: ModelSpec, W,
                          prior: PriorSpec, step, rng, current: FilterOutput = None, index=None,
                          _target=None):
    """Random-walk Metropolis update of the correlation parameters.

    ``params`` is ``[rho]`` for a bivariate Uniform(-1, 1) model, else the
    unnormalised factor entries. ``index`` restricts the move to a subset of
    the entries (``step`` then refers to that subset). Returns
    ``(params, accepted, filter_output)``.
    """
    n = spec.n
    target = _target or _Target(data, spec, prior)
    params = np.asarray(params, float)
    if current is None:
        current = target.filter(garch, correlation_matrix(params, n, prior), W)
    prop = params.copy()
    if index is None:
        prop = _propose(params, step, rng)
    else:
        prop[index] = _propose(params[index], step, rng)
    lp_prop = log_prior_correlation(prop, n, prior)
    if not math.isfinite(lp_prop):
        return params, False, current
    try:
        out = target.filter(garch, correlation_matrix(prop, n, prior), W)
    except FilterError:
        return params, False, current
    log_ratio = out.loglik + lp_prop - current.loglik - log_prior_correlation(params, n, prior)
    if _mh_accept(log_ratio, rng):
        return prop, True, out
    return params, False, current


def _chol_params(W):
    L = np.linalg.cholesky(W)
    r = L.shape[0]
    il = np.tril_indices(r, -1)
    return np.concatenate((np.log(np.diag(L)), L[il]))


def _chol_from_params(v, r):
    L = np.zeros((r, r))
    L[np.diag_indices(r)] = np.exp(v[:r])
    L[np.tril_indices(r, -1)] = v[r:]
    return L


def log_posterior_W_kernel(v, r, df, S0) -> float:
    """IW log density of ``W = L L^T`` in log-Cholesky coordinates, Jacobian included."""
    L = _chol_from_params(v, r)
    logdiag = v[:r]
    # |dW/dL| = 2^r prod L_ii^(r - i + 1); log-diagonal adds prod L_ii
    log_jac = np.sum((r - np.arange(r) + 1) * logdiag)
    Linv = np.linalg.solve(L, np.eye(r))
    return float(-(df + r + 1) * logdiag.sum() - 0.5 * np.sum(S0 * (Linv.T @ Linv)) + log_jac)


def mh_update_W(W, garch: GarchParams, R, data: SeriesData, spec: ModelSpec, prior: PriorSpec, step, rng,
                current: FilterOutput = None, _target=None):
    """Random-walk Metropolis on ``W`` through its log-Cholesky coordinates.

    Targets the filter likelihood (states integrated out) times the
    inverse-Wishart prior. Returns ``(W, accepted, filter_output)``.
    """
    r = spec.r
    target = _target or _Target(data, spec, prior)
    if current is None:
        current = target.filter(garch, R, W)
    df, S0 = prior.W_prior(r)
    v = _chol_params(W)
    prop = _propose(v, step, rng)
    L = _chol_from_params(prop, r)
    W_new = L @ L.T
    try:
        out = target.filter(garch, R, W_new)
    except FilterError:
        return W, False, current
    log_ratio = (out.loglik + log_posterior_W_kernel(prop, r, df, S0)
                 - current.loglik - log_posterior_W_kernel(v, r, df, S0))
    if _mh_accept(log_ratio, rng):
        return W_new, True, out
    return W, False, current


class _AdaptiveBlock:
    """Proposal factor with Robbins-Monro scale and burn-in covariance learning."""

    def __init__(self, name, init_sd, target_accept=0.3, adapt=True):
        self.name = name
        self.dim = init_sd.size
        self.base = np.diag(np.asarray(init_sd, float))
        self.log_scale = 0.0
        self.target = target_accept
        self.adapt = adapt
        self.k = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros((self.dim, self.dim))
        self.n_seen = 0
        self.accepted = 0
        self.tried = 0

    @property
    def factor(self):
        return math.exp(self.log_scale) * self.base

    def record(self, accepted, value, burning, collect_cov):
        if burning and self.adapt:
            self.k += 1
            self.log_scale += (float(accepted) - self.target) / self.k ** 0.6
            self.log_scale = min(max(self.log_scale, -15.0), 5.0)
            if collect_cov:
                self.n_seen += 1
                delta = value - self.mean
                self.mean += delta / self.n_seen
                self.m2 += np.outer(delta, value - self.mean)
                if self.n_seen >= 200 and self.n_seen % 100 == 0:
                    cov = self.m2 / (self.n_seen - 1)
                    cov = cov + 1e-10 * np.eye(self.dim) * max(np.trace(cov) / self.dim, 1e-12)
                    try:
                        base = np.linalg.cholesky(cov) * (2.38 / math.sqrt(self.dim))
                    except np.linalg.LinAlgError:
                        return
                    self.base = base
                    if self.n_seen == 200:
                        # 2.38/sqrt(d) already sets the scale for a learned shape
                        self.log_scale = 0.0
                        self.k = 0
        elif not burning:
            self.tried += 1
            self.accepted += int(accepted)

    @property
    def rate(self):
        return self.accepted / self.tried if self.tried else float("nan")


def _as_seed(chain_seed):
    if isinstance(chain_seed, np.random.SeedSequence):
        return chain_seed
    return np.random.SeedSequence(chain_seed)


def run_chain(data: SeriesData, spec: ModelSpec, priors: PriorSpec, config: McmcConfig, chain_seed,
              model: str = "garch", orders=(1, 1), n_keep=None, chain_id: int = 0,
              callback=None) -> PosteriorDraws:
    """Run one Metropolis-within-Gibbs chain.

    ``model="garch"`` sweeps: per-series GARCH blocks and per-row correlation
    blocks (each targeting the state-marginalised likelihood), a marginal
    Metropolis move on ``W``, an FFBS state draw, a conjugate ``W | states``
    draw and (if data are missing) an imputation draw. ``model="dlm"`` is the
    homoskedastic benchmark with conjugate inverse-Wishart updates for both
    ``V`` and ``W``. ``n_keep`` defaults to
    the first chain's share of ``config.n_keep``.
    """
    if model not in ("garch", "dlm"):
        raise ValueError("model must be 'garch' or 'dlm'")
    if data.n != spec.n:
        raise ValueError(f"data have {data.n} series but the model expects {spec.n}")
    rng = np.random.default_rng(_as_seed(chain_seed))
    n, r, T = spec.n, spec.r, data.T
    p, q = orders if model == "garch" else (0, 0)
    keep = config.keep_per_chain()[0] if n_keep is None else int(n_keep)
    n_iter = config.burn_in + keep * config.thin
    target = _Target(data, spec, priors)
    has_missing = bool((~data.observed).any())
    n_missing = int((~data.observed).sum())

    W = sample_W_conjugate(np.zeros((1, r)), spec, priors, rng)
    if model == "garch":
        garch = _draw_garch_init(n, p, q, priors, rng)
        corr = _draw_corr_init(n, priors, rng)
        R = correlation_matrix(corr, n, priors)
        V = None
    else:
        df, S0 = priors.V_prior(n)
        V = _iw_draw(df, S0, rng)
        garch, R = _dlm_as_garch(V)
        corr = np.array([R[i, j] for i in range(n) for j in range(i + 1, n)])

    sd_g = config.proposal_sd.get("garch", 0.05)
    sd_c = config.proposal_sd.get("corr", 0.05)
    g_blocks = [
        _AdaptiveBlock(f"garch[{i + 1}]", sd_g * np.r_[max(1.0, garch.alpha0[i]), np.ones(p + q)],
                       config.target_accept, config.adapt)
        for i in range(n)
    ] if model == "garch" else []
    c_blocks = []
    if model == "garch" and corr.size:
        for name, idx in _corr_blocks(n, priors):
            c_blocks.append((_AdaptiveBlock(name, np.full(idx.size, sd_c), config.target_accept, config.adapt), idx))
    w_block = (
        _AdaptiveBlock("W", np.full(r * (r + 1) // 2, config.proposal_sd.get("W", 0.05)),
                       config.target_accept, config.adapt)
        if config.marginal_W else None
    )

    store = _Store(keep, n, p, q, r, T, corr.size, n_missing, config.store_states, model)

    def fail(it, block, exc):
        raise ChainError(f"chain {chain_id}: iteration {it}, block {block}: {exc}",
                         iteration=it, block=block, chain=chain_id) from exc

    try:
        current = target.filter(garch, R, W)
    except FilterError as exc:
        fail(0, "init", exc)

    # shape learning in the middle half of burn-in, scale-only tuning afterwards
    collect_from, collect_to = config.burn_in // 4, (3 * config.burn_in) // 4
    kept = 0
    for it in range(n_iter):
        burning = it < config.burn_in
        if model == "garch":
            for i, blk in enumerate(g_blocks):
                garch, acc, current = mh_update_garch(garch, i, data, spec, R, W, priors, blk.factor, rng,
                                                      current=current, _target=target)
                blk.record(acc, garch.series_vector(i), burning, collect_from <= it < collect_to)
            for blk, idx in c_blocks:
                corr, acc, current = mh_update_correlation(corr, garch, data, spec, W, priors, blk.factor,
                                                           rng, current=current, index=idx, _target=target)
                blk.record(acc, corr[idx], burning, collect_from <= it < collect_to)
            R = correlation_matrix(corr, n, priors)
        if w_block is not None:
            W, acc, current = mh_update_W(W, garch, R, data, spec, priors, w_block.factor, rng,
                                          current=current, _target=target)
            w_block.record(acc, _chol_params(W), burning, collect_from <= it < collect_to)
        try:
            states = ffbs(current, spec, rng)
        except FilterError as exc:
            fail(it, "ffbs", exc)
        if model == "dlm":
            y_full = data.y.copy()
            if has_missing:
                imputed = impute_missing(states, spec, np.diag(V), R, data, rng)
                y_full[~data.observed] = imputed
            V = sample_V_conjugate(y_full, states, spec, priors, rng)
            garch, R = _dlm_as_garch(V)
        W = sample_W_conjugate(states, spec, priors, rng)
        try:
            current = target.filter(garch, R, W)
        except FilterError as exc:
            fail(it, "W", exc)
        if model == "garch" and has_missing:
            imputed = impute_missing(states, spec, current.S2, R, data, rng)
        elif not has_missing:
            imputed = None

        if not burning and (it - config.burn_in + 1) % config.thin == 0:
            _check_draw(garch, R, W, it, chain_id)
            store.put(kept, garch, R, corr, W, V, current, states, imputed)
            kept += 1
        if callback is not None:
            callback(it, n_iter, current.loglik)

    rates = {b.name: b.rate for b in g_blocks}
    for blk in [b for b, _ in c_blocks] + [w_block]:
        if blk is not None:
            rates[blk.name] = blk.rate
    return store.finish(chain_id, rates)


def _dlm_as_garch(V):
    d = np.diag(V)
    sd = np.sqrt(d)
    R = V / (sd[:, None] * sd[None, :])
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return GarchParams(d, np.zeros((d.size, 0)), np.zeros((d.size, 0))), R


def _check_draw(garch, R, W, it, chain_id):
    ok = (
        np.all(garch.alpha0 > 0)
        and np.all(garch.persistence < 1)
        and np.allclose(np.diag(R), 1.0)
        and np.all(np.linalg.eigvalsh(R) > 0)
        and np.all(np.linalg.eigvalsh(W) > 0)
    )
    if not ok:
        raise ChainError(f"chain {chain_id}: constraint violated at iteration {it}", iteration=it,
                         block="store", chain=chain_id)


class _Store:
    def __init__(self, keep, n, p, q, r, T, k_corr, n_missing, store_states, model):
        self.model = model
        self.alpha0 = np.empty((keep, n))
        self.alpha = np.empty((keep, n, p))
        self.beta = np.empty((keep, n, q))
        self.R = np.empty((keep, n, n))
        self.corr = np.empty((keep, k_corr))
        self.W = np.empty((keep, r, r))
        self.V = np.empty((keep, n, n)) if model == "dlm" else None
        self.lp = np.empty((keep, T))
        self.states = np.empty((keep, T + 1, r)) if store_states else None
        self.S2 = np.empty((keep, T, n)) if store_states else None
        self.f = np.empty((keep, T, n)) if store_states else None
        self.imputed = np.empty((keep, n_missing)) if n_missing else None

    def put(self, k, garch, R, corr, W, V, out, states, imputed):
        self.alpha0[k] = garch.alpha0
        self.alpha[k] = garch.alpha
        self.beta[k] = garch.beta
        self.R[k] = R
        self.corr[k] = corr
        self.W[k] = W
        if self.V is not None:
            self.V[k] = V
        self.lp[k] = out.pointwise
        if self.states is not None:
            self.states[k] = states
            self.S2[k] = out.S2
            self.f[k] = out.f
        if self.imputed is not None:
            self.imputed[k] = imputed

    def finish(self, chain_id, rates):
        return PosteriorDraws(
            kind=self.model, alpha0=self.alpha0, alpha=self.alpha, beta=self.beta, R=self.R,
            corr=self.corr, W=self.W, V=self.V, pointwise_lp=self.lp,
            chain_id=np.full(self.alpha0.shape[0], chain_id, dtype=int),
            states=self.states, S2=self.S2, f=self.f, imputed=self.imputed,
            acceptance_rates=rates,
        )


def run_chains_parallel(data: SeriesData, spec: ModelSpec, priors: PriorSpec, config: McmcConfig,
                        model: str = "garch", orders=(1, 1), n_jobs=None) -> PosteriorDraws:
    """Run ``config.n_chains`` independent chains and merge them in chain order.

    Chain ``c`` uses the ``c``-th child of ``SeedSequence(config.seed)``, so the
    merged output does not depend on ``n_jobs``. Failed chains are recorded in
    ``failures``; an error is raised only if every chain fails.
    """
    seeds = config.chain_seeds()
    keeps = config.keep_per_chain()
    n_jobs = config.n_jobs if n_jobs is None else n_jobs

    def work(c):
        try:
            return run_chain(data, spec, priors, config, seeds[c], model=model, orders=orders,
                             n_keep=keeps[c], chain_id=c)
        except (ChainError, FilterError, np.linalg.LinAlgError) as exc:
            logger.error("chain %d failed: %s", c, exc)
            return exc

    if n_jobs and n_jobs > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, range(config.n_chains)))
    else:
        results = [work(c) for c in range(config.n_chains)]
    good = [res for res in results if isinstance(res, PosteriorDraws)]
    failures = {c: str(res) for c, res in enumerate(results) if not isinstance(res, PosteriorDraws)}
    if not good:
        raise ChainError(f"all {config.n_chains} chains failed: {failures}")
    merged = PosteriorDraws.concatenate(good)
    merged.failures = failures
    return merged
