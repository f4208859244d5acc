"""Likelihood-ratio machinery for the filter recursions.

Per-state density ratios against a reference law under which observations
are i.i.d. Gaussian, a data-driven reference scale, and the clipped,
mean-one-recalibrated ratio that caps the weight any single observation can
exert on the filters.

All ratio evaluations are done in log space so that extreme observations
degrade gracefully instead of producing NaNs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .filters import BreakdownError
from .model import RegimeModel

__all__ = [
    "MAD_CONSISTENCY",
    "ReferenceMeasure",
    "LambdaCalibration",
    "norm_pdf",
    "norm_cdf",
    "scaled_mad",
    "gamma",
    "gamma_vector",
    "lambda_tilde",
    "calibrate_clipping",
    "lambda_bar",
    "robust_gamma_vector",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Standard normal quantile at 3/4; scales the raw MAD to the normal sigma.
MAD_CONSISTENCY = 0.6744897501960817

_TINY = np.finfo(float).tiny


def norm_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
    return float(out) if out.ndim == 0 else out


def norm_cdf(z):
    """Standard normal cumulative distribution function."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


def scaled_mad(values) -> float:
    """Median absolute deviation scaled to be consistent for the normal sigma."""
    arr = np.asarray(values, dtype=float)
    med = np.median(arr)
    return float(np.median(np.abs(arr - med)) / MAD_CONSISTENCY)


@dataclass(frozen=True)
class ReferenceMeasure:
    """Reference law N(0, sigma_bar^2) for the likelihood-ratio denominators.

    sigma_bar only rescales all ratios by a common per-observation factor, so
    normalized filter output is invariant to it; its job is purely numerical.
    """

    sigma_bar: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.sigma_bar) or self.sigma_bar <= 0.0:
            raise ValueError("sigma_bar must be a positive finite number")

    @classmethod
    def from_returns(cls, values, method: str = "mad") -> "ReferenceMeasure":
        """Data-driven reference scale: robust ("mad") or classical ("std")."""
        arr = np.asarray(values, dtype=float)
        if method == "mad":
            scale = scaled_mad(arr)
        elif method == "std":
            scale = float(arr.std())
        else:
            raise ValueError(f"unknown reference method {method!r}")
        if scale <= 0.0:
            raise ValueError("degenerate return series: zero reference scale")
        return cls(scale)


@dataclass(frozen=True)
class LambdaCalibration:
    """Clipping height and recalibration constants for the bounded ratio.

    clip_b caps the deviation of sqrt(ratio) from its reference-law mean
    sqrt_mean; consistency rescales the clipped ratio back to mean one under
    the reference law.  clip_b may be infinite (no clipping).
    """

    alpha: float
    clip_b: float
    consistency: float
    sqrt_mean: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not self.clip_b > 0.0:
            raise ValueError("clip_b must be positive")
        if not (np.isfinite(self.consistency) and self.consistency > 0.0):
            raise ValueError("consistency must be positive and finite")
        if not (np.isfinite(self.sqrt_mean) and self.sqrt_mean > 0.0):
            raise ValueError("sqrt_mean must be positive and finite")

    @property
    def upper_bound(self) -> float:
        """Uniform upper bound consistency * (sqrt_mean + clip_b)^2."""
        if not np.isfinite(self.clip_b):
            return float("inf")
        return self.consistency * (self.sqrt_mean + self.clip_b) ** 2


def _log_gamma_states(model: RegimeModel, y: float, ref: ReferenceMeasure) -> np.ndarray:
    z = (y - model.drift) / model.vol
    log_num = -0.5 * z * z - np.log(model.vol)
    zr = y / ref.sigma_bar
    log_den = -0.5 * zr * zr - math.log(ref.sigma_bar)
    return log_num - log_den


def gamma(model: RegimeModel, y: float, i: int, ref: ReferenceMeasure | None = None) -> float:
    """Per-state density ratio phi((y - f_i)/s_i) / (s_i * phi_ref(y)).

    phi_ref is the standard normal density unless a reference measure with a
    different scale is supplied.  Overflow to a non-finite value raises
    BreakdownError naming the state and observation; underflow to zero is
    returned as-is and surfaces later as a zero filter normalizer.
    """
    ref = ref if ref is not None else ReferenceMeasure()
    if not (0 <= i < model.n_states):
        raise IndexError(f"state index {i} out of range")
    value = float(np.exp(_log_gamma_states(model, float(y), ref)[i]))
    if not np.isfinite(value):
        raise BreakdownError(
            f"density ratio overflow for state {i} at y={y!r}",
            observation=float(y),
            quantity=f"gamma[{i}]",
        )
    return value


def gamma_vector(model: RegimeModel, y: float, ref: ReferenceMeasure | None = None) -> np.ndarray:
    """All per-state density ratios at one observation."""
    ref = ref if ref is not None else ReferenceMeasure()
    values = np.exp(_log_gamma_states(model, float(y), ref))
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise BreakdownError(
            f"density ratio overflow for state {bad} at y={y!r}",
            observation=float(y),
            quantity=f"gamma[{bad}]",
        )
    return values


def _lambda_tilde_values(
    model: RegimeModel, ref: ReferenceMeasure, ys: np.ndarray, probs: np.ndarray
) -> np.ndarray:
    """Vectorized mixture ratio at many observations (log-sum-exp over states)."""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    z = (ys[:, None] - model.drift[None, :]) / model.vol[None, :]
    log_num = -0.5 * z * z - np.log(model.vol)[None, :]
    with np.errstate(divide="ignore"):
        log_num = log_num + np.log(probs)[None, :]
    top = log_num.max(axis=1)
    mix = np.exp(log_num - top[:, None]).sum(axis=1)
    zr = ys / ref.sigma_bar
    log_den = -0.5 * zr * zr - math.log(ref.sigma_bar)
    return np.exp(top + np.log(mix) - log_den)


def lambda_tilde(model: RegimeModel, ref: ReferenceMeasure, y: float, state_dist) -> float:
    """Mixture likelihood ratio against the reference law.

    Weighs each state's density by state_dist (typically the one-step
    predicted state probabilities) and divides by the reference density.
    """
    probs = np.asarray(getattr(state_dist, "probs", state_dist), dtype=float)
    value = float(_lambda_tilde_values(model, ref, float(y), probs)[0])
    if not np.isfinite(value):
        raise BreakdownError(
            f"mixture likelihood ratio overflow at y={y!r}",
            observation=float(y),
            quantity="lambda_tilde",
        )
    return value


def calibrate_clipping(
    model: RegimeModel,
    ref: ReferenceMeasure,
    state_dist,
    alpha: float = 0.95,
    mc_size: int = 10_000,
    seed: int = 0,
) -> LambdaCalibration:
    """Choose the clipping height so the clipped ratio has mean alpha.

    Draws observations from the reference law (under which the unclipped
    ratio has mean one), solves for the clipping height b by monotone root
    finding so that the mean clipped ratio equals alpha, and sets the
    consistency factor so the recalibrated ratio has mean one again.
    alpha = 1 yields an infinite clipping height.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    if mc_size < 10_000:
        raise ValueError("mc_size must be at least 10000")
    probs = np.asarray(getattr(state_dist, "probs", state_dist), dtype=float)
    rng = np.random.default_rng(seed)
    ys = ref.sigma_bar * rng.standard_normal(mc_size)
    lam = _lambda_tilde_values(model, ref, ys, probs)
    sqrt_lam = np.sqrt(lam)
    m = float(sqrt_lam.mean())
    dev = sqrt_lam - m
    lam_mean = float(lam.mean())

    if alpha >= 1.0 or alpha >= lam_mean:
        clipped = lam
        b = float("inf")
    else:
        lo = m * m - alpha
        if lo >= 0.0:
            raise ValueError(
                "cannot calibrate clipping: mean clipped ratio at b=0 is "
                f"{m * m:.6f} >= alpha={alpha}; bracket [0, inf) empty"
            )
        b_hi = float(np.abs(dev).max())

        def objective(b_try):
            lb = (m + np.clip(dev, -b_try, b_try)) ** 2
            return float(lb.mean()) - alpha

        b = float(brentq(objective, 0.0, b_hi, xtol=1e-12))
        clipped = (m + np.clip(dev, -b, b)) ** 2

    consistency = 1.0 / float(clipped.mean())
    return LambdaCalibration(alpha=alpha, clip_b=b, consistency=consistency, sqrt_mean=m)


def lambda_bar(
    model: RegimeModel,
    ref: ReferenceMeasure,
    calib: LambdaCalibration,
    y: float,
    state_dist,
) -> float:
    """Clipped, mean-one-recalibrated likelihood ratio at one observation.

    Bounded above by calib.upper_bound regardless of y.
    """
    lam = lambda_tilde(model, ref, y, state_dist)
    dev = math.sqrt(lam) - calib.sqrt_mean
    if np.isfinite(calib.clip_b):
        dev = min(max(dev, -calib.clip_b), calib.clip_b)
    return calib.consistency * (calib.sqrt_mean + dev) ** 2


def robust_gamma_vector(
    model: RegimeModel,
    ref: ReferenceMeasure,
    calib: LambdaCalibration,
    y: float,
    state_dist,
) -> np.ndarray:
    """Per-state ratios rescaled so their state mixture equals the clipped ratio.

    Keeps the relative discrimination between states but caps the total
    weight of the observation.  Computed via max-shifted logs so that far-out
    observations keep a well-defined state direction, and floored at a tiny
    positive value so the filter normalizer cannot be annihilated.
    """
    probs = np.asarray(getattr(state_dist, "probs", state_dist), dtype=float)
    lg = _log_gamma_states(model, float(y), ref)
    top = float(lg.max())
    rel = np.exp(lg - top)
    mix = float(probs @ rel)
    if mix <= 0.0:
        mix = _TINY
    log_lam = top + math.log(mix)
    # sqrt in log space: harmless underflow to 0 / overflow to inf, both of
    # which the clip resolves to a finite plateau.
    sqrt_lam = math.exp(0.5 * log_lam) if 0.5 * log_lam < 700.0 else float("inf")
    dev = sqrt_lam - calib.sqrt_mean
    if np.isfinite(calib.clip_b):
        dev = min(max(dev, -calib.clip_b), calib.clip_b)
    lam0 = calib.consistency * (calib.sqrt_mean + dev) ** 2
    lam0 = max(lam0, _TINY)
    return (lam0 / mix) * rel
