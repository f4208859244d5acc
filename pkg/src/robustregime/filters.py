"""Recursive filters for chain statistics observed in Gaussian noise.

Carries unnormalized conditional expectations eta_k(H_k X_k) for four
process families: the state itself, pairwise jump counts J^{sr}, occupation
times O^r, and the observation aggregates T^r(g) for g(y) = y and g(y) = y^2.
One step consumes a single observation and a vector of per-state likelihood
factors; normalization is a plain Bayes quotient against <1, eta(X)>.

A brute-force oracle that enumerates every chain path is provided for small
instances and serves as the reference implementation in tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import RegimeModel, ReturnSeries, StateDistribution

__all__ = [
    "BreakdownError",
    "FilterBank",
    "FilterEstimates",
    "OracleResult",
    "init_filters",
    "step",
    "normalize",
    "rescale",
    "filter_series",
    "brute_force_oracle",
]

_ORACLE_PATH_LIMIT = 1_000_000


class BreakdownError(RuntimeError):
    """Raised when the recursion can no longer carry information forward.

    This happens when every per-state likelihood factor underflows to zero
    (the normalizer <1, eta(X)> vanishes) or a non-finite value appears.
    It is a first-class observable: the classical algorithm is expected to
    die this way on severe outliers.
    """

    def __init__(self, message, time_index=None, observation=None, quantity=None):
        super().__init__(message)
        self.time_index = time_index
        self.observation = observation
        self.quantity = quantity


@dataclass(frozen=True)
class FilterBank:
    """Unnormalized filter state after k observations.

    eta_x has shape (N,); eta_j has shape (N, N, N) indexed [to, from, :];
    eta_o, eta_t1 and eta_t2 have shape (N, N) indexed [state, :].
    """

    eta_x: np.ndarray
    eta_j: np.ndarray
    eta_o: np.ndarray
    eta_t1: np.ndarray
    eta_t2: np.ndarray
    k: int

    @property
    def n_states(self) -> int:
        return self.eta_x.size

    @property
    def normalizer(self) -> float:
        return float(self.eta_x.sum())


@dataclass(frozen=True)
class FilterEstimates:
    """Normalized (Bayes-quotient) estimates at the current time.

    jumps[s, r] estimates the number of r -> s transitions so far,
    occupation[r] the time spent in state r, obs_sum[r] and obs_sq_sum[r]
    the state-weighted sums of y and y^2.
    """

    state: StateDistribution
    jumps: np.ndarray
    occupation: np.ndarray
    obs_sum: np.ndarray
    obs_sq_sum: np.ndarray


@dataclass(frozen=True)
class OracleResult:
    """Exact enumeration output: estimates plus the smoothed state path.

    smoothed_prev[l - 1] is the conditional distribution of the state at
    time l - 1 given all k observations, for l = 1..k.
    """

    estimates: FilterEstimates
    smoothed_prev: np.ndarray


def init_filters(x0: StateDistribution) -> FilterBank:
    """Fresh filter bank: eta(X) carries the prior, all accumulators zero."""
    n = x0.n_states
    return FilterBank(
        eta_x=x0.probs.copy(),
        eta_j=np.zeros((n, n, n)),
        eta_o=np.zeros((n, n)),
        eta_t1=np.zeros((n, n)),
        eta_t2=np.zeros((n, n)),
        k=0,
    )


def step(bank: FilterBank, model: RegimeModel, gammas, y: float) -> FilterBank:
    """Advance every filter by one observation.

    gammas is the length-N vector of per-state likelihood factors for y
    (classical density ratios, or their clipped rescaling in robust mode).
    Each update pushes the previous vectors through the transition matrix
    weighted by gammas and adds the source-state contribution of the new
    observation.  Returns a new bank; the input is never mutated.
    """
    g = np.asarray(gammas, dtype=float)
    n = bank.n_states
    if g.shape != (n,):
        raise ValueError(f"gammas must have shape ({n},), got {g.shape}")
    if not np.all(np.isfinite(g)) or np.any(g < 0.0):
        raise BreakdownError(
            f"non-finite or negative likelihood factor at step {bank.k + 1}",
            time_index=bank.k + 1,
            observation=float(y),
            quantity="gammas",
        )
    trans = model.transition
    weighted = g * bank.eta_x  # indexed by the source state
    new_x = trans @ weighted

    new_j = np.einsum("mb,srb->srm", trans, g * bank.eta_j)
    idx = np.arange(n)
    # Jump source term: for each (s, r), add gamma_r * eta_x[r] * pi_sr * e_s.
    new_j[idx[:, None], idx[None, :], idx[:, None]] += trans * weighted[None, :]

    source = weighted[:, None] * trans.T  # row r is gamma_r * eta_x[r] * (Pi e_r)
    new_o = np.einsum("mb,rb->rm", trans, g * bank.eta_o) + source
    new_t1 = np.einsum("mb,rb->rm", trans, g * bank.eta_t1) + float(y) * source
    new_t2 = np.einsum("mb,rb->rm", trans, g * bank.eta_t2) + float(y) ** 2 * source

    k = bank.k + 1
    norm = float(new_x.sum())
    if not np.isfinite(norm) or norm <= 0.0:
        raise BreakdownError(
            f"filter normalizer collapsed to {norm!r} at step {k} (y={y!r})",
            time_index=k,
            observation=float(y),
            quantity="<1, eta(X)>",
        )
    for name, arr in (
        ("eta_j", new_j),
        ("eta_o", new_o),
        ("eta_t1", new_t1),
        ("eta_t2", new_t2),
    ):
        if not np.all(np.isfinite(arr)):
            raise BreakdownError(
                f"non-finite value in {name} at step {k} (y={y!r})",
                time_index=k,
                observation=float(y),
                quantity=name,
            )
    return FilterBank(new_x, new_j, new_o, new_t1, new_t2, k)


def normalize(bank: FilterBank) -> FilterEstimates:
    """Bayes quotients of every carried filter against <1, eta(X)>."""
    norm = bank.normalizer
    if not np.isfinite(norm) or norm <= 0.0:
        raise BreakdownError(
            f"cannot normalize: <1, eta(X)> = {norm!r} at step {bank.k}",
            time_index=bank.k,
            quantity="<1, eta(X)>",
        )
    probs = np.clip(bank.eta_x / norm, 0.0, None)
    return FilterEstimates(
        state=StateDistribution(probs / probs.sum()),
        jumps=bank.eta_j.sum(axis=2) / norm,
        occupation=bank.eta_o.sum(axis=1) / norm,
        obs_sum=bank.eta_t1.sum(axis=1) / norm,
        obs_sq_sum=bank.eta_t2.sum(axis=1) / norm,
    )


def rescale(bank: FilterBank) -> FilterBank:
    """Divide every stored vector by <1, eta(X)>.

    Leaves all normalized quantities untouched; run after each step to keep
    the recursion away from under- and overflow.
    """
    norm = bank.normalizer
    if not np.isfinite(norm) or norm <= 0.0:
        raise BreakdownError(
            f"cannot rescale: <1, eta(X)> = {norm!r} at step {bank.k}",
            time_index=bank.k,
            quantity="<1, eta(X)>",
        )
    return FilterBank(
        eta_x=bank.eta_x / norm,
        eta_j=bank.eta_j / norm,
        eta_o=bank.eta_o / norm,
        eta_t1=bank.eta_t1 / norm,
        eta_t2=bank.eta_t2 / norm,
        k=bank.k,
    )


def filter_series(model, x0, ys, gammas_fn, rescale_each: bool = True):
    """Run the recursion over a series; returns (bank, filtered state path).

    gammas_fn(y, l) must return the length-N factor vector for the l-th
    observation (1-based).  The returned path has one row per observation
    holding the normalized state estimate after that observation.
    """
    values = ys.values if isinstance(ys, ReturnSeries) else np.asarray(ys, dtype=float)
    bank = init_filters(x0)
    path = np.empty((values.size, x0.n_states))
    for l, y in enumerate(values, start=1):
        bank = step(bank, model, gammas_fn(float(y), l), float(y))
        if rescale_each:
            bank = rescale(bank)
        path[l - 1] = bank.eta_x / bank.normalizer
    return bank, path


def brute_force_oracle(model, x0, ys, gammas_fn) -> OracleResult:
    """Exact conditional expectations by summation over all chain paths.

    Each path x_0..x_k is weighted by its prior probability under the chain
    times the product of per-step factors gammas_fn(y_l, l)[x_{l-1}].  The
    quotient of path-weighted statistics against the total weight gives the
    exact analogue of the recursive filters; instances are capped at
    N^k <= 1e6 paths.
    """
    values = ys.values if isinstance(ys, ReturnSeries) else np.asarray(ys, dtype=float)
    n = model.n_states
    k = values.size
    if n**k > _ORACLE_PATH_LIMIT:
        raise ValueError(f"instance too large to enumerate: {n}^{k} paths")
    paths = np.array(
        list(itertools.product(range(n), repeat=k + 1)), dtype=np.int8
    ).reshape(n ** (k + 1), k + 1)
    weights = x0.probs[paths[:, 0]].astype(float)
    for l in range(1, k + 1):
        g = np.asarray(gammas_fn(float(values[l - 1]), l), dtype=float)
        weights = weights * model.transition[paths[:, l], paths[:, l - 1]]
        weights = weights * g[paths[:, l - 1]]
    total = float(weights.sum())
    if total <= 0.0:
        raise BreakdownError("all path weights vanished", quantity="total weight")

    state = np.zeros(n)
    np.add.at(state, paths[:, k], weights)
    jumps = np.zeros((n, n))
    occupation = np.zeros(n)
    obs_sum = np.zeros(n)
    obs_sq_sum = np.zeros(n)
    smoothed_prev = np.zeros((k, n))
    for l in range(1, k + 1):
        np.add.at(jumps, (paths[:, l], paths[:, l - 1]), weights)
        np.add.at(occupation, paths[:, l - 1], weights)
        np.add.at(obs_sum, paths[:, l - 1], weights * float(values[l - 1]))
        np.add.at(obs_sq_sum, paths[:, l - 1], weights * float(values[l - 1]) ** 2)
        np.add.at(smoothed_prev[l - 1], paths[:, l - 1], weights)

    estimates = FilterEstimates(
        state=StateDistribution(state / total),
        jumps=jumps / total,
        occupation=occupation / total,
        obs_sum=obs_sum / total,
        obs_sq_sum=obs_sq_sum / total,
    )
    return OracleResult(estimates=estimates, smoothed_prev=smoothed_prev / total)
