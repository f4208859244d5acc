"""Reusable robust-statistics primitives.

Clipping, weighted medians and MADs, Monte-Carlo consistency factors, the
finite-sample breakdown point of weighted order statistics, and the bounded
location-scale influence function driving the one-step parameter updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "WeightedSample",
    "MbreConstants",
    "huber_clip",
    "weighted_median",
    "weighted_mad",
    "mc_consistency_factor",
    "fsbp",
    "mbre_if",
]


@dataclass(frozen=True)
class WeightedSample:
    """Observations paired with non-negative weights of positive total mass."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("values must be a non-empty 1-d array")
        if weights.shape != values.shape:
            raise ValueError("weights must match values in shape")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(weights)):
            raise ValueError("values and weights must be finite")
        if np.any(weights < 0.0):
            raise ValueError("weights must be non-negative")
        if weights.sum() <= 0.0:
            raise ValueError("weights must have positive total mass")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class MbreConstants:
    """Constants of the constant-norm location-scale influence function.

    The default values give a psi function of exact Euclidean norm ``b``
    whose moment conditions (mean zero, identity cross-moment with the
    Gaussian location-scale score) hold to roughly four digits.
    """

    A: float = 0.7917
    a: float = -0.4970
    b: float = 1.8546

    def __post_init__(self):
        if self.b <= 0.0:
            raise ValueError("b must be positive")


def huber_clip(z, b: float):
    """Clip ``z`` to the centered ball of radius ``b``.

    Scalars are clipped in absolute value; a 1-d array is treated as a single
    vector and shrunk along its direction (Euclidean norm).  Returns ``z``
    unchanged whenever its norm is at most ``b``.
    """
    if b <= 0.0:
        raise ValueError("clipping radius b must be positive")
    arr = np.asarray(z, dtype=float)
    if arr.ndim > 1:
        raise ValueError("huber_clip accepts scalars or 1-d vectors")
    norm = float(np.abs(arr)) if arr.ndim == 0 else float(np.linalg.norm(arr))
    if norm <= b or norm == 0.0:
        return float(arr) if arr.ndim == 0 else arr.copy()
    scaled = arr * (b / norm)
    return float(scaled) if arr.ndim == 0 else scaled


def _weighted_median_rows(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted median, minimizing sum_j w_j |y_j - m| per row.

    When the minimizing set is an interval the midpoint between its endpoints
    is returned.  ``weights`` may be a single (k,) vector shared by all rows.
    """
    v = np.asarray(values, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), v.shape)
    order = np.argsort(v, axis=1, kind="stable")
    vs = np.take_along_axis(v, order, axis=1)
    ws = np.take_along_axis(w, order, axis=1)
    cw = np.cumsum(ws, axis=1)
    total = cw[:, -1]
    half = 0.5 * total
    eps = 1e-9 * total
    rows = np.arange(v.shape[0])
    idx = (cw >= (half - eps)[:, None]).argmax(axis=1)
    med = vs[rows, idx]
    tie = np.abs(cw[rows, idx] - half) <= eps
    if np.any(tie):
        # Flat stretch of the loss: extend to the next point carrying weight.
        k = v.shape[1]
        cols = np.arange(k)[None, :]
        candidates = np.where((ws > 0.0) & (cols > idx[:, None]), cols, k)
        nxt = candidates.min(axis=1)
        has_next = nxt < k
        upper = vs[rows, np.minimum(nxt, k - 1)]
        med = np.where(tie & has_next, 0.5 * (med + upper), med)
    return med


def weighted_median(sample: WeightedSample) -> float:
    """Weighted median: argmin over m of sum_j w_j |y_j - m|.

    Ties (a minimizing interval) are broken at the interval midpoint.
    """
    return float(
        _weighted_median_rows(sample.values[None, :], sample.weights)[0]
    )


def weighted_mad(sample: WeightedSample, center: float, consistency: float) -> float:
    """Scaled weighted MAD about ``center``.

    Weighted median of |y_j - center| divided by the consistency factor.
    Degenerate samples (all values equal to center) yield 0; callers that
    need a strictly positive scale must apply their own floor.
    """
    if consistency <= 0.0:
        raise ValueError("consistency factor must be positive")
    deviations = np.abs(sample.values - center)
    raw = float(_weighted_median_rows(deviations[None, :], sample.weights)[0])
    return raw / consistency


def mc_consistency_factor(weights, mc_reps: int = 10_000, seed: int = 0) -> float:
    """Monte-Carlo consistency factor for the weighted MAD at the normal law.

    Averages, over ``mc_reps`` replicates of i.i.d. standard normal samples,
    the weighted median of the absolute draws under the given weights.  The
    same median convention as :func:`weighted_median` is used, so dividing a
    weighted MAD by this factor makes it consistent for the normal sigma
    under exactly these weights.
    """
    if mc_reps < 1000:
        raise ValueError("mc_reps must be at least 1000")
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1 or np.any(w < 0.0) or w.sum() <= 0.0:
        raise ValueError("weights must be non-negative with positive total")
    rng = np.random.default_rng(seed)
    k = w.size
    # Chunked so reps * k stays within a modest memory budget.
    chunk = max(1, min(mc_reps, int(2**24 // max(k, 1)) or 1))
    total = 0.0
    done = 0
    while done < mc_reps:
        m = min(chunk, mc_reps - done)
        z = np.abs(rng.standard_normal((m, k)))
        total += float(_weighted_median_rows(z, w).sum())
        done += m
    return total / mc_reps


def fsbp(weights) -> Fraction:
    """Finite-sample breakdown point of the weighted median / weighted MAD.

    With normalized weights sorted in decreasing order, returns j0/k where j0
    is the smallest count of top weights whose mass reaches one half.  This
    is the number of arbitrarily placed replacements needed to carry the
    estimate away, divided by the sample size.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1 or np.any(w < 0.0):
        raise ValueError("weights must be a non-negative 1-d array")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights must have positive total mass")
    ordered = np.sort(w)[::-1] / total
    cum = np.cumsum(ordered)
    j0 = int(np.argmax(cum >= 0.5 - 1e-12)) + 1
    return Fraction(j0, int(w.size))


def mbre_if(u, constants: MbreConstants | None = None):
    """Bounded location-scale influence function at the standard normal.

    Returns the pair (psi_loc, psi_scale) = b * Y(u) / |Y(u)| with
    Y(u) = (u, A*(u^2 - 1) - a).  The output always has Euclidean norm b;
    the location coordinate is odd in u and the scale coordinate even.
    Accepts scalars or arrays (evaluated elementwise).
    """
    c = constants if constants is not None else MbreConstants()
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("u must be finite")
    y1 = arr
    y2 = c.A * (arr * arr - 1.0) - c.a
    norm = np.hypot(y1, y2)
    # norm > 0 for the default constants: y2 = -A - a != 0 at u = 0.
    loc = c.b * y1 / norm
    scale = c.b * y2 / norm
    if arr.ndim == 0:
        return float(loc), float(scale)
    return loc, scale
