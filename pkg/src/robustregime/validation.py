"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .model import ReturnSeries

__all__ = ["as_return_values", "check_option"]


def as_return_values(X, name: str = "X") -> np.ndarray:
    """Coerce a return series into a finite 1-d float array.

    Accepts a ReturnSeries, any 1-d array-like, or a single-column 2-d array
    (the sklearn column-vector convention).
    """
    if isinstance(X, ReturnSeries):
        return X.values.copy()
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d or a single-column 2-d array")
    if arr.size < 1:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{name} contains a non-finite value at index {bad}")
    return arr


def check_option(name: str, value: str, options) -> str:
    if value not in options:
        raise ValueError(f"{name} must be one of {sorted(options)}, got {value!r}")
    return value
