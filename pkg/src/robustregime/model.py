"""Core types for Gaussian regime-switching return models.

The observed log-return at time k+1 is drift[x_k] + vol[x_k] * w, with w a
standard normal shock and x_k an unobserved Markov chain on N states.  The
transition matrix is stored column-stochastic: transition[j, i] is the
probability of moving to state j given the chain currently sits in state i.
Every consumer in this package is written against that orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegimeModel",
    "StateDistribution",
    "ReturnSeries",
    "returns_from_prices",
    "stationary_distribution",
]

_SUM_TOL = 1e-12


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RegimeModel:
    """Parameter set of an N-state regime-switching return model.

    Attributes
    ----------
    transition : (N, N) array, column-stochastic.
    drift : (N,) array of per-period log-return means.
    vol : (N,) array of per-period log-return volatilities, strictly positive.
    """

    transition: np.ndarray
    drift: np.ndarray
    vol: np.ndarray

    def __post_init__(self):
        drift = _readonly(self.drift)
        vol = _readonly(self.vol)
        trans = _readonly(self.transition)
        if drift.ndim != 1 or drift.size < 1:
            raise ValueError("drift must be a non-empty 1-d array")
        n = drift.size
        if vol.shape != (n,):
            raise ValueError(f"vol must have shape ({n},), got {vol.shape}")
        if trans.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {trans.shape}")
        for name, arr in (("transition", trans), ("drift", drift), ("vol", vol)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must contain only finite values")
        if np.any(trans < 0.0) or np.any(trans > 1.0):
            raise ValueError("transition entries must lie in [0, 1]")
        col_err = np.abs(trans.sum(axis=0) - 1.0)
        if np.any(col_err > _SUM_TOL):
            raise ValueError(
                f"transition columns must sum to 1 (max deviation {col_err.max():.3e})"
            )
        if np.any(vol <= 0.0):
            raise ValueError("vol entries must be strictly positive")
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "vol", vol)

    @property
    def n_states(self) -> int:
        return self.drift.size


@dataclass(frozen=True)
class StateDistribution:
    """Probability vector over the chain states (barycentric coordinates)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a non-empty 1-d array")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
            raise ValueError("probs must be finite and non-negative")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probs must sum to 1, got {probs.sum()!r}")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.size

    @classmethod
    def uniform(cls, n_states: int) -> "StateDistribution":
        return cls(np.full(n_states, 1.0 / n_states))


@dataclass(frozen=True)
class ReturnSeries:
    """Ordered sequence of log-returns, optionally with timestamps."""

    values: np.ndarray
    timestamps: tuple | None = None

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("values must be a non-empty 1-d array")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must contain only finite entries")
        if self.timestamps is not None:
            stamps = tuple(self.timestamps)
            if len(stamps) != values.size:
                raise ValueError("timestamps must match values in length")
            object.__setattr__(self, "timestamps", stamps)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


def returns_from_prices(prices) -> ReturnSeries:
    """Convert a strictly positive price path into log-returns.

    Element k of the output is log(prices[k+1] / prices[k]).
    """
    arr = np.asarray(prices, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("need at least two prices")
    bad = np.flatnonzero(~(np.isfinite(arr) & (arr > 0.0)))
    if bad.size:
        raise ValueError(
            f"price at index {bad[0]} is not strictly positive: {arr[bad[0]]!r}"
        )
    return ReturnSeries(np.diff(np.log(arr)))


def stationary_distribution(
    model: RegimeModel, max_iter: int = 20_000, tol: float = 1e-13
) -> StateDistribution:
    """Stationary distribution of the chain, by power iteration from uniform.

    Raises RuntimeError (with a ``residual`` attribute) if the iteration does
    not settle; callers that only need a starting value should fall back to
    the uniform distribution in that case.
    """
    n = model.n_states
    p = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        nxt = model.transition @ p
        total = nxt.sum()
        if total <= 0.0:
            break
        nxt /= total
        if np.abs(nxt - p).sum() < tol:
            p = nxt
            converged = True
            break
        p = nxt
    residual = float(np.abs(model.transition @ p - p).sum())
    if not converged and residual > 1e-9:
        err = RuntimeError(
            f"power iteration did not converge (L1 residual {residual:.3e})"
        )
        err.residual = residual
        raise err
    p = np.clip(p, 0.0, None)
    return StateDistribution(p / p.sum())
