"""Starting values from univariate Gaussian-mixture fits.

The classical variant fits N components and takes their maximum-likelihood
moments.  The robust variant fits N+1 components, treats the one with the
lowest frequency as a noise bucket for outliers, redistributes its points
over the remaining components, and re-estimates each component by weighted
median and scaled weighted MAD so that stray points cannot poison the
start.  Transition columns and the initial state distribution are filled
from component frequencies, i.e. the chain is started as if independent of
its past.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measure import scaled_mad
from .model import RegimeModel, ReturnSeries, StateDistribution
from .robust import WeightedSample, mc_consistency_factor, weighted_mad, weighted_median

__all__ = ["MixtureFit", "InitResult", "fit_gmm", "classical_init", "robust_init"]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureFit:
    """A fitted univariate Gaussian mixture.

    responsibilities has one row per observation, rows summing to one;
    frequencies are the component masses; loglik_path records the objective
    across EM iterations of the winning restart.
    """

    n_components: int
    means: np.ndarray
    sds: np.ndarray
    frequencies: np.ndarray
    responsibilities: np.ndarray
    log_likelihood: float
    loglik_path: np.ndarray


@dataclass(frozen=True)
class InitResult:
    """Starting values plus, for the robust variant, per-state weights."""

    model: RegimeModel
    x0: StateDistribution
    weights: np.ndarray | None = None
    method: str = "classical"
    frequencies: np.ndarray | None = None


def _values(ys) -> np.ndarray:
    return ys.values if isinstance(ys, ReturnSeries) else np.asarray(ys, dtype=float)


def _log_responsibilities(y, means, sds, weights):
    z = (y[:, None] - means[None, :]) / sds[None, :]
    log_comp = -0.5 * z * z - np.log(sds)[None, :] - _LOG_SQRT_2PI
    with np.errstate(divide="ignore"):
        log_comp = log_comp + np.log(weights)[None, :]
    top = log_comp.max(axis=1, keepdims=True)
    norm = np.exp(log_comp - top).sum(axis=1, keepdims=True)
    log_total = top + np.log(norm)
    return log_comp - log_total, float(log_total.sum())


def _kmeanspp_centers(y, n_components, rng):
    centers = [y[rng.integers(y.size)]]
    for _ in range(n_components - 1):
        d2 = np.min((y[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers.append(y[rng.integers(y.size)])
        else:
            centers.append(y[rng.choice(y.size, p=d2 / total)])
    return np.asarray(centers)


def fit_gmm(
    ys,
    n_components: int,
    restarts: int = 5,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> MixtureFit:
    """Fit a univariate Gaussian mixture by EM, best of several restarts.

    Each restart seeds means by a k-means++ style draw, runs EM until the
    log-likelihood gain drops below tol, and floors the component sds at
    1e-6 times the overall scaled MAD.  Deterministic under the seed.
    Raises if every restart degenerates.
    """
    y = _values(ys)
    if n_components < 1:
        raise ValueError("n_components must be at least 1")
    if y.size < 2 * n_components:
        raise ValueError(
            f"need at least {2 * n_components} observations for {n_components} components"
        )
    overall = scaled_mad(y)
    if overall <= 0.0:
        overall = float(np.std(y))
    floor = max(1e-6 * overall, 1e-30)

    root = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        rng = np.random.default_rng(root.integers(2**63))
        means = _kmeanspp_centers(y, n_components, rng)
        assign = np.argmin(np.abs(y[:, None] - means[None, :]), axis=1)
        sds = np.empty(n_components)
        weights = np.empty(n_components)
        for c in range(n_components):
            members = y[assign == c]
            weights[c] = max(members.size / y.size, 1e-3)
            sds[c] = members.std() if members.size > 1 else overall
        sds = np.maximum(sds, floor)
        weights = weights / weights.sum()

        path = []
        ok = True
        for _ in range(max_iter):
            log_resp, ll = _log_responsibilities(y, means, sds, weights)
            if not np.isfinite(ll):
                ok = False
                break
            path.append(ll)
            resp = np.exp(log_resp)
            mass = resp.sum(axis=0)
            if np.any(mass <= 0.0):
                ok = False
                break
            means = (resp * y[:, None]).sum(axis=0) / mass
            var = (resp * (y[:, None] - means[None, :]) ** 2).sum(axis=0) / mass
            sds = np.maximum(np.sqrt(var), floor)
            weights = mass / y.size
            if len(path) > 1 and path[-1] - path[-2] < tol * max(1.0, abs(path[-2])):
                break
        if not ok or not path:
            continue
        log_resp, ll = _log_responsibilities(y, means, sds, weights)
        if best is None or ll > best[0]:
            resp = np.exp(log_resp)
            best = (ll, means.copy(), sds.copy(), weights.copy(), resp, np.asarray(path))
    if best is None:
        raise ValueError(
            f"mixture fit degenerated in all {restarts} restarts; try fewer components"
        )
    ll, means, sds, weights, resp, path = best
    return MixtureFit(
        n_components=n_components,
        means=means,
        sds=sds,
        frequencies=resp.mean(axis=0),
        responsibilities=resp,
        log_likelihood=float(ll),
        loglik_path=path,
    )


def _model_from_frequencies(drift, vol, frequencies) -> tuple:
    freq = np.clip(np.asarray(frequencies, dtype=float), 0.0, None)
    freq = freq / freq.sum()
    n = freq.size
    transition = np.tile(freq[:, None], (1, n))
    model = RegimeModel(transition=transition, drift=drift, vol=vol)
    return model, StateDistribution(freq)


def classical_init(ys, n_states: int, seed: int = 0, restarts: int = 5) -> InitResult:
    """Moment-based starting values from an N-component mixture fit.

    Every transition column is the component frequency vector (the chain is
    started independent of its history); states are relabeled by ascending
    drift so runs are comparable.
    """
    fit = fit_gmm(ys, n_states, restarts=restarts, seed=seed)
    order = np.argsort(fit.means)
    model, x0 = _model_from_frequencies(
        fit.means[order], fit.sds[order], fit.frequencies[order]
    )
    return InitResult(
        model=model, x0=x0, method="classical", frequencies=fit.frequencies[order]
    )


def robust_init(
    ys,
    n_states: int,
    seed: int = 0,
    restarts: int = 5,
    consistency_reps: int = 1000,
    reassign: str = "random",
) -> InitResult:
    """Starting values that survive outliers in the data.

    Fits N+1 mixture components and treats the lowest-frequency one (ties
    broken toward the widest) as a pure noise bucket.  Its points are handed
    to the retained components, by default at random proportionally to their
    frequencies ("random"), alternatively by their posterior weight under
    the retained components ("posterior").  Component location and scale are
    then re-estimated as weighted medians and scaled weighted MADs with the
    post-redistribution responsibilities as weights.
    """
    if reassign not in ("random", "posterior"):
        raise ValueError(f"unknown reassign policy {reassign!r}")
    y = _values(ys)
    fit = fit_gmm(ys, n_states + 1, restarts=restarts, seed=seed)
    rng = np.random.default_rng(np.random.default_rng(seed).integers(2**63) ^ 0x9E3779B9)

    freq = fit.frequencies
    lowest = np.flatnonzero(freq == freq.min())
    noise = int(lowest[np.argmax(fit.sds[lowest])])
    retained = [c for c in range(n_states + 1) if c != noise]

    resp = fit.responsibilities
    labels = resp.argmax(axis=1)
    retained_freq = freq[retained]
    retained_freq = retained_freq / retained_freq.sum()

    post = resp[:, retained].copy()
    row_mass = post.sum(axis=1)
    is_noise = labels == noise
    safe = np.maximum(row_mass, 1e-300)
    post = post / safe[:, None]
    if np.any(is_noise):
        idx = np.flatnonzero(is_noise)
        if reassign == "random":
            choice = rng.choice(len(retained), size=idx.size, p=retained_freq)
            post[idx] = 0.0
            post[idx, choice] = 1.0
        else:
            degenerate = idx[row_mass[idx] <= 1e-300]
            post[degenerate] = retained_freq

    frequencies = post.mean(axis=0)
    overall = scaled_mad(y)
    floor = max(1e-6 * (overall if overall > 0.0 else float(np.std(y))), 1e-30)
    child = np.random.default_rng(seed)
    drift = np.empty(n_states)
    vol = np.empty(n_states)
    for i in range(n_states):
        w = post[:, i]
        if w.sum() <= 0.0:
            drift[i] = float(np.median(y))
            vol[i] = max(overall, floor)
            continue
        sample = WeightedSample(y, w)
        drift[i] = weighted_median(sample)
        c = mc_consistency_factor(w, mc_reps=consistency_reps, seed=int(child.integers(2**63)))
        vol[i] = max(weighted_mad(sample, drift[i], c), floor)

    order = np.argsort(drift)
    model, x0 = _model_from_frequencies(drift[order], vol[order], frequencies[order])
    return InitResult(
        model=model,
        x0=x0,
        weights=post[:, order],
        method="robust",
        frequencies=frequencies[order],
    )
