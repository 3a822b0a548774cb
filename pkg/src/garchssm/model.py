"""Model specification, CCC-GARCH variance arithmetic and forward simulation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ModelSpec",
    "GarchParams",
    "CorrelationFactor",
    "SeriesData",
    "SimulationTruth",
    "build_random_walk_plus_noise",
    "build_local_linear_trend",
    "garch_variance_step",
    "build_observation_cov",
    "correlation_from_factor",
    "correlation_from_rho",
    "simulate",
    "apply_missingness",
]

DIFFUSE_C0 = 1.0e7
# sum of loadings above which the unconditional variance is not used as warm-up
PERSISTENCE_CUTOFF = 0.999


def _is_spd(a: np.ndarray) -> bool:
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
        return False
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass
class ModelSpec:
    """Time-invariant DLM skeleton ``y_t = F' theta_t + z_t``, ``theta_t = G theta_{t-1} + w_t``.

    ``Fprime`` is the n x r observation map, ``G`` the r x r evolution matrix and
    ``m0``/``C0`` the moments of ``theta_0``.
    """

    Fprime: np.ndarray
    G: np.ndarray
    m0: np.ndarray
    C0: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        self.Fprime = np.atleast_2d(np.asarray(self.Fprime, dtype=float))
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.m0 = np.asarray(self.m0, dtype=float).reshape(-1)
        self.C0 = np.atleast_2d(np.asarray(self.C0, dtype=float))
        n, r = self.Fprime.shape
        if n < 1 or r < 1:
            raise ValueError("Fprime must be at least 1 x 1")
        if self.G.shape != (r, r):
            raise ValueError(f"G must have shape {(r, r)}, got {self.G.shape}")
        if self.m0.shape != (r,):
            raise ValueError(f"m0 must have length {r}, got {self.m0.shape[0]}")
        if self.C0.shape != (r, r):
            raise ValueError(f"C0 must have shape {(r, r)}, got {self.C0.shape}")
        if not _is_spd(self.C0):
            raise ValueError("C0 must be symmetric positive definite")

    @property
    def n(self) -> int:
        return self.Fprime.shape[0]

    @property
    def r(self) -> int:
        return self.Fprime.shape[1]

    def with_prior(self, m0=None, C0=None) -> "ModelSpec":
        return replace(
            self,
            m0=self.m0 if m0 is None else m0,
            C0=self.C0 if C0 is None else C0,
        )


def _default_prior(r, m0, c0):
    m0 = np.zeros(r) if m0 is None else np.broadcast_to(np.asarray(m0, float), (r,)).copy()
    if c0 is None:
        c0 = DIFFUSE_C0
    C0 = c0 * np.eye(r) if np.ndim(c0) == 0 else np.asarray(c0, float)
    return m0, C0


def build_random_walk_plus_noise(n: int, m0=None, c0=None) -> ModelSpec:
    """Local-level model: ``F' = G = I_n``.

    ``c0`` may be a scalar (multiplying the identity) or a full matrix; the
    default is a diffuse ``1e7 * I``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m0, C0 = _default_prior(n, m0, c0)
    return ModelSpec(np.eye(n), np.eye(n), m0, C0, kind="rwpn")


def build_local_linear_trend(n: int, m0=None, c0=None) -> ModelSpec:
    """Per-series (level, slope) states with ``G`` block ``[[1, 1], [0, 1]]``.

    State ordering is ``(mu_1, lambda_1, mu_2, lambda_2, ...)``; ``F'`` picks the
    levels.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    r = 2 * n
    G = np.kron(np.eye(n), np.array([[1.0, 1.0], [0.0, 1.0]]))
    Fprime = np.kron(np.eye(n), np.array([[1.0, 0.0]]))
    m0, C0 = _default_prior(r, m0, c0)
    return ModelSpec(Fprime, G, m0, C0, kind="trend")


@dataclass
class GarchParams:
    """Per-series GARCH(p, q) loadings.

    ``alpha0`` has shape (n,), ``alpha`` (n, p) and ``beta`` (n, q).
    """

    alpha0: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha0 = np.asarray(self.alpha0, dtype=float).reshape(-1)
        n = self.alpha0.shape[0]
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(n, -1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(n, -1)
        if np.any(~np.isfinite(self.alpha0)) or np.any(self.alpha0 <= 0):
            raise ValueError("alpha0 must be strictly positive")
        if np.any(self.alpha < 0) or np.any(self.beta < 0):
            raise ValueError("ARCH/GARCH loadings must be nonnegative")
        bad = np.flatnonzero(self.persistence >= 1.0)
        if bad.size:
            raise ValueError(f"stationarity violated for series {bad.tolist()}: sum(alpha) + sum(beta) >= 1")

    @classmethod
    def garch11(cls, alpha0, alpha1, beta1) -> "GarchParams":
        alpha0 = np.atleast_1d(np.asarray(alpha0, float))
        return cls(alpha0, np.reshape(alpha1, (-1, 1)), np.reshape(beta1, (-1, 1)))

    @classmethod
    def homoskedastic(cls, alpha0, p: int = 1, q: int = 1) -> "GarchParams":
        alpha0 = np.atleast_1d(np.asarray(alpha0, float))
        n = alpha0.shape[0]
        return cls(alpha0, np.zeros((n, p)), np.zeros((n, q)))

    @property
    def n(self) -> int:
        return self.alpha0.shape[0]

    @property
    def p(self) -> int:
        return self.alpha.shape[1]

    @property
    def q(self) -> int:
        return self.beta.shape[1]

    @property
    def persistence(self) -> np.ndarray:
        return self.alpha.sum(axis=1) + self.beta.sum(axis=1)

    def initial_variance(self) -> np.ndarray:
        """Pre-sample variance: unconditional level, or ``alpha0`` near unit persistence."""
        s = self.persistence
        out = self.alpha0.copy()
        ok = s <= PERSISTENCE_CUTOFF
        out[ok] = self.alpha0[ok] / (1.0 - s[ok])
        return out

    def series_vector(self, i: int) -> np.ndarray:
        return np.concatenate(([self.alpha0[i]], self.alpha[i], self.beta[i]))

    def with_series(self, i: int, vec) -> "GarchParams":
        vec = np.asarray(vec, float)
        a0, a, b = self.alpha0.copy(), self.alpha.copy(), self.beta.copy()
        a0[i] = vec[0]
        a[i] = vec[1 : 1 + self.p]
        b[i] = vec[1 + self.p :]
        return GarchParams(a0, a, b)

    @staticmethod
    def in_support(vec) -> bool:
        """Whether ``(alpha0, alpha_1..p, beta_1..q)`` is a valid single-series vector."""
        vec = np.asarray(vec)
        return bool(vec[0] > 0 and np.all(vec[1:] >= 0) and vec[1:].sum() < 1.0)


def garch_variance_step(params: GarchParams, i: int, lagged_z2, lagged_sigma2) -> float:
    """One step of the variance recursion for series ``i``.

    ``lagged_z2[j]`` is ``z^2_{t-1-j}`` and ``lagged_sigma2[j]`` is ``sigma^2_{t-1-j}``.
    """
    lagged_z2 = np.asarray(lagged_z2, dtype=float).reshape(-1)
    lagged_sigma2 = np.asarray(lagged_sigma2, dtype=float).reshape(-1)
    if lagged_z2.shape[0] != params.p or lagged_sigma2.shape[0] != params.q:
        raise ValueError(f"expected {params.p} squared-error lags and {params.q} variance lags")
    if np.any(lagged_z2 < 0) or np.any(lagged_sigma2 < 0):
        raise ValueError("lagged squared errors and variances must be nonnegative")
    if params.alpha0[i] <= 0:
        raise ValueError("alpha0 must be strictly positive")
    return float(params.alpha0[i] + params.alpha[i] @ lagged_z2 + params.beta[i] @ lagged_sigma2)


def build_observation_cov(sigma, R) -> np.ndarray:
    """``V = D R D`` with ``D = diag(sigma)``."""
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if np.any(sigma <= 0):
        raise ValueError("conditional standard deviations must be positive")
    R = np.asarray(R, dtype=float)
    if R.shape != (sigma.size, sigma.size):
        raise ValueError("R and sigma dimensions disagree")
    return sigma[:, None] * R * sigma[None, :]


@dataclass
class CorrelationFactor:
    """Upper-triangular ``U`` with unit-norm rows, so ``U U^T`` is a correlation matrix."""

    U: np.ndarray

    @property
    def R(self) -> np.ndarray:
        R = self.U @ self.U.T
        R = 0.5 * (R + R.T)
        np.fill_diagonal(R, 1.0)
        return R

    @property
    def n(self) -> int:
        return self.U.shape[0]


def correlation_from_factor(U_raw) -> tuple[CorrelationFactor, np.ndarray]:
    """Normalise the rows of an upper-triangular factor and return ``(U, U U^T)``."""
    U_raw = np.atleast_2d(np.asarray(U_raw, dtype=float))
    n = U_raw.shape[0]
    if U_raw.shape != (n, n):
        raise ValueError("U must be square")
    if np.any(np.tril(U_raw, -1) != 0):
        raise ValueError("U must be upper triangular")
    if np.any(np.diag(U_raw) <= 0):
        raise ValueError("diagonal of U must be strictly positive")
    norms = np.linalg.norm(U_raw, axis=1)
    U = U_raw / norms[:, None]
    factor = CorrelationFactor(U)
    return factor, factor.R


def correlation_from_rho(rho: float) -> np.ndarray:
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    return np.array([[1.0, rho], [rho, 1.0]])


@dataclass
class SeriesData:
    """Observations ``y`` (T x n) with a boolean ``observed`` mask.

    Cells where ``observed`` is False are ignored everywhere; their ``y`` value is
    stored as NaN.
    """

    y: np.ndarray
    observed: np.ndarray = None
    columns: list = None
    time: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise ValueError("y must be a T x n matrix")
        if self.observed is None:
            observed = np.isfinite(y)
        else:
            observed = np.asarray(self.observed, dtype=bool)
            if observed.shape != y.shape:
                raise ValueError(f"mask shape {observed.shape} does not match data shape {y.shape}")
            observed = observed & np.isfinite(y)
        y = np.where(observed, y, np.nan)
        if not observed.any():
            raise ValueError("data contain no observed cells")
        self.y = y
        self.observed = observed
        if self.columns is None:
            self.columns = [f"y{i + 1}" for i in range(y.shape[1])]

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]


@dataclass
class SimulationTruth:
    states: np.ndarray  # (T+1, r), row 0 is theta_0
    sigma: np.ndarray  # (T, n)
    z: np.ndarray  # (T, n)
    R: np.ndarray = field(default=None)
    W: np.ndarray = field(default=None)


def simulate(
    spec: ModelSpec,
    garch: GarchParams,
    R,
    W,
    T: int,
    seed=None,
    theta0=None,
) -> tuple[SeriesData, SimulationTruth]:
    """Draw a path from the GARCH state-space model.

    ``R`` is a correlation matrix or a :class:`CorrelationFactor`. ``theta0`` fixes the initial state; otherwise it is drawn from
    ``N(m0, C0)``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if garch.n != spec.n:
        raise ValueError("GARCH parameters and spec disagree on n")
    if isinstance(R, CorrelationFactor):
        R = R.R
    R = np.asarray(R, dtype=float)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    n, r = spec.n, spec.r
    if R.shape != (n, n) or W.shape != (r, r):
        raise ValueError("R or W has the wrong shape")
    rng = np.random.default_rng(seed)
    LR = np.linalg.cholesky(R)
    # W may be singular (e.g. zero) in degenerate simulations
    evals, evecs = np.linalg.eigh(0.5 * (W + W.T))
    LW = evecs * np.sqrt(np.clip(evals, 0.0, None))

    states = np.empty((T + 1, r))
    if theta0 is None:
        states[0] = rng.multivariate_normal(spec.m0, spec.C0)
    else:
        states[0] = np.broadcast_to(np.asarray(theta0, float), (r,))
    p, q = garch.p, garch.q
    init = garch.initial_variance()
    z2_hist = np.tile(init, (p, 1))  # row j holds z^2_{t-1-j}
    s2_hist = np.tile(init, (q, 1))
    sigma = np.empty((T, n))
    z = np.empty((T, n))
    y = np.empty((T, n))
    for t in range(T):
        states[t + 1] = spec.G @ states[t] + LW @ rng.standard_normal(r)
        s2 = garch.alpha0 + np.einsum("ij,ji->i", garch.alpha, z2_hist) + np.einsum("ij,ji->i", garch.beta, s2_hist)
        sigma[t] = np.sqrt(s2)
        # chol(D R D) = D chol(R)
        z[t] = sigma[t] * (LR @ rng.standard_normal(n))
        y[t] = spec.Fprime @ states[t + 1] + z[t]
        if p:
            z2_hist = np.roll(z2_hist, 1, axis=0)
            z2_hist[0] = z[t] ** 2
        if q:
            s2_hist = np.roll(s2_hist, 1, axis=0)
            s2_hist[0] = s2
    data = SeriesData(y, np.ones((T, n), dtype=bool))
    return data, SimulationTruth(states=states, sigma=sigma, z=z, R=R.copy(), W=W.copy())


def apply_missingness(data: SeriesData, mask) -> SeriesData:
    """Combine ``data.observed`` with an extra mask (True = keep)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != data.y.shape:
        raise ValueError(f"mask shape {mask.shape} does not match data shape {data.y.shape}")
    observed = data.observed & mask
    return SeriesData(np.where(observed, data.y, np.nan), observed, list(data.columns), data.time)
