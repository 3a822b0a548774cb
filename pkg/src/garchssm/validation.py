"""Input checks shared by the estimator and the array-level API."""
from __future__ import annotations

import numbers

import numpy as np

from .model import SeriesData

__all__ = ["check_series", "check_positive_int", "check_fraction", "check_square_psd"]


def check_series(X, n_features=None, allow_all_missing=False) -> SeriesData:
    """Coerce ``X`` to :class:`SeriesData`.

    Accepts ``SeriesData``, a (T, n) or (T,) array-like with NaN marking
    missing cells, or a pandas DataFrame (column names are kept). Infinite
    values are rejected.
    """
    if isinstance(X, SeriesData):
        data = X
    else:
        columns = None
        if hasattr(X, "columns") and hasattr(X, "to_numpy"):
            columns = [str(c) for c in X.columns]
            X = X.to_numpy(dtype=float, na_value=np.nan)
        try:
            y = np.asarray(X, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"X must be numeric: {exc}") from None
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise ValueError(f"X must be 1- or 2-dimensional, got shape {y.shape}")
        if y.shape[0] == 0 or y.shape[1] == 0:
            raise ValueError(f"X has an empty dimension: shape {y.shape}")
        if np.isinf(y).any():
            raise ValueError("X contains infinite values; use NaN for missing cells")
        if not allow_all_missing and np.isnan(y).all():
            raise ValueError("X contains no observed values")
        data = SeriesData(y, np.isfinite(y), columns=columns)
    if n_features is not None and data.n != n_features:
        raise ValueError(f"X has {data.n} series but the estimator was fitted with {n_features}")
    return data


def check_positive_int(value, name, minimum=1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_fraction(value, name, open_interval=True) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValueError(f"{name} must be a number, got {value!r}")
    ok = 0 < value < 1 if open_interval else 0 <= value <= 1
    if not ok:
        raise ValueError(f"{name} must lie in {'(0, 1)' if open_interval else '[0, 1]'}, got {value!r}")
    return float(value)


def check_square_psd(A, dim, name) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim} x {dim}, got {A.shape}")
    if not np.allclose(A, A.T):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(A).min() < -1e-12 * max(1.0, np.abs(A).max()):
        raise ValueError(f"{name} must be positive semi-definite")
    return A
