"""Kalman filter with CCC-GARCH observation variance and missing-data handling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import GarchParams, ModelSpec, SeriesData

__all__ = [
    "FilterError",
    "FilterStep",
    "FilterOutput",
    "kalman_filter",
    "one_step_forecasts",
    "pointwise_log_predictive",
    "rts_smoother",
]


class FilterError(RuntimeError):
    """Raised when a forecast covariance stays singular after jitter."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class FilterStep:
    a: np.ndarray
    P: np.ndarray
    S2: np.ndarray
    f: np.ndarray
    Q: np.ndarray
    e: np.ndarray
    K: np.ndarray
    m: np.ndarray
    C: np.ndarray
    logpred: float


@dataclass
class FilterOutput:
    """Stacked filter moments.

    Time-indexed arrays have leading length T and row ``t - 1`` refers to time
    ``t``; ``m`` and ``C`` have length T + 1 with row 0 holding the prior
    ``(m0, C0)``. ``S2`` is the filtered conditional variance path and
    ``pointwise`` the log one-step predictive density of the observed part of
    each ``y_t``.
    """

    a: np.ndarray
    P: np.ndarray
    m: np.ndarray
    C: np.ndarray
    S2: np.ndarray
    f: np.ndarray
    Q: np.ndarray
    e: np.ndarray
    K: np.ndarray
    pointwise: np.ndarray

    @property
    def T(self) -> int:
        return self.a.shape[0]

    @property
    def loglik(self) -> float:
        return float(self.pointwise.sum())

    def step(self, t: int) -> FilterStep:
        """Moments at time ``t`` (1-based)."""
        if not 1 <= t <= self.T:
            raise IndexError(f"t must be in 1..{self.T}")
        i = t - 1
        return FilterStep(
            a=self.a[i], P=self.P[i], S2=self.S2[i], f=self.f[i], Q=self.Q[i],
            e=self.e[i], K=self.K[i], m=self.m[t], C=self.C[t],
            logpred=float(self.pointwise[i]),
        )

    @property
    def steps(self) -> list[FilterStep]:
        return [self.step(t) for t in range(1, self.T + 1)]


def _as_inputs(data, spec):
    if isinstance(data, SeriesData):
        y, obs = data.y, data.observed
    else:
        y = np.asarray(data, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        obs = np.isfinite(y)
    if y.shape[1] != spec.n:
        raise ValueError(f"data have {y.shape[1]} series but the model expects {spec.n}")
    return np.ascontiguousarray(np.where(obs, y, 0.0)), np.ascontiguousarray(obs)


def run_filter(y, obs, spec: ModelSpec, alpha0, alpha, beta, R, W, s2_init) -> FilterOutput:
    """Array-level entry point (no validation); ``y`` must be zero-filled where unobserved."""
    T, n = y.shape
    r = spec.r
    out = FilterOutput(
        a=np.empty((T, r)), P=np.empty((T, r, r)),
        m=np.empty((T + 1, r)), C=np.empty((T + 1, r, r)),
        S2=np.empty((T, n)), f=np.empty((T, n)), Q=np.empty((T, n, n)),
        e=np.empty((T, n)), K=np.empty((T, r, n)), pointwise=np.empty(T),
    )
    ez2 = np.empty((T, n))
    status, t = _kernels.filter_kernel(
        y, obs, spec.Fprime, spec.G, spec.m0, spec.C0, W,
        alpha0, alpha, beta, R, s2_init,
        out.a, out.P, out.m, out.C, out.S2, out.f, out.Q, out.e, out.K, out.pointwise, ez2,
    )
    if status != _kernels.OK:
        raise FilterError(f"forecast covariance Q_t is not positive definite at t={t + 1}", t=t + 1)
    return out


def kalman_filter(data, spec: ModelSpec, garch: GarchParams, R, W) -> FilterOutput:
    """Filter ``data`` under the GARCH state-space model.

    Missing components are dropped from the update at each step: their gain
    columns are zero, a fully missing step leaves ``m_t = a_t`` and
    ``C_t = P_t``, and ``pointwise`` only scores the observed components.

    Raises
    ------
    FilterError
        If ``Q_t`` restricted to the observed components cannot be factorised
        even after adding ``1e-10 I``.
    """
    y, obs = _as_inputs(data, spec)
    n, r = spec.n, spec.r
    R = np.ascontiguousarray(np.asarray(R, dtype=float).reshape(n, n))
    W = np.ascontiguousarray(np.atleast_2d(np.asarray(W, dtype=float)))
    if W.shape != (r, r):
        raise ValueError(f"W must have shape {(r, r)}")
    if garch.n != n:
        raise ValueError("GARCH parameters and spec disagree on n")
    return run_filter(
        y, obs, spec, garch.alpha0, np.ascontiguousarray(garch.alpha),
        np.ascontiguousarray(garch.beta), R, W, garch.initial_variance(),
    )


def one_step_forecasts(output: FilterOutput) -> tuple[np.ndarray, np.ndarray]:
    """Forecast means (T, n) and covariances (T, n, n) of ``y_t`` given ``y_{1:t-1}``."""
    return output.f, output.Q


def pointwise_log_predictive(output: FilterOutput) -> np.ndarray:
    return output.pointwise


def rts_smoother(output: FilterOutput, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rauch-Tung-Striebel smoothed means (T+1, r) and covariances (T+1, r, r) of ``theta_{0:T}``."""
    T = output.T
    s = output.m.copy()
    S = output.C.copy()
    G = spec.G
    for t in range(T - 1, -1, -1):
        # output.a[t] / P[t] are the moments of theta_{t+1} given y_{1:t}
        J = np.linalg.solve(output.P[t], G @ output.C[t]).T
        s[t] = output.m[t] + J @ (s[t + 1] - output.a[t])
        S[t] = output.C[t] + J @ (S[t + 1] - output.P[t]) @ J.T
        S[t] = 0.5 * (S[t] + S[t].T)
    return s, S
