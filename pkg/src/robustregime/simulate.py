"""Synthetic regime-switching return paths and exogenous outlier injection.

Contamination follows the substitution scheme: at selected time steps the
clean observation is replaced outright by a distorting value drawn
independently of the chain, so outliers never propagate into the states.
Presets quantify "considerable" and "severe" outliers as 6 and 25 stationary
standard deviations of the model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .model import RegimeModel, ReturnSeries, StateDistribution, stationary_distribution

__all__ = [
    "ContaminationSpec",
    "SimulatedPath",
    "simulate_hmm",
    "contaminate",
    "least_favorable_contaminator",
    "stationary_return_std",
    "preset_contamination",
    "CONSIDERABLE_SDS",
    "SEVERE_SDS",
    "DEFAULT_OUTLIER_POSITIONS",
]

CONSIDERABLE_SDS = 6.0
SEVERE_SDS = 25.0
DEFAULT_OUTLIER_POSITIONS = (40, 80, 130, 140)


@dataclass(frozen=True)
class ContaminationSpec:
    """How to replace observations: not at all, at fixed 1-based positions
    with given values, or by an i.i.d. coin flip with a distortion sampler."""

    mechanism: str = "none"  # "none" | "fixed" | "iid"
    rate: float = 0.0
    positions: tuple = ()
    values: tuple = ()
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    label: str = "none"

    def __post_init__(self):
        if self.mechanism not in ("none", "fixed", "iid"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if not (0.0 <= self.rate < 1.0):
            raise ValueError("rate must lie in [0, 1)")
        if self.mechanism == "fixed":
            if not self.positions:
                raise ValueError("fixed mechanism needs positions")
            if len(self.values) != len(self.positions):
                raise ValueError("need one replacement value per position")
            if any(p < 1 for p in self.positions):
                raise ValueError("positions are 1-based and must be >= 1")
        if self.mechanism == "iid" and self.sampler is None:
            raise ValueError("iid mechanism needs a distortion sampler")

    @classmethod
    def none(cls) -> "ContaminationSpec":
        return cls()

    @classmethod
    def fixed(cls, positions, values, label: str = "fixed") -> "ContaminationSpec":
        positions = tuple(int(p) for p in positions)
        values = np.broadcast_to(np.asarray(values, dtype=float), (len(positions),))
        return cls(
            mechanism="fixed",
            positions=positions,
            values=tuple(float(v) for v in values),
            label=label,
        )

    @classmethod
    def iid(cls, rate, sampler, label: str = "iid") -> "ContaminationSpec":
        return cls(mechanism="iid", rate=float(rate), sampler=sampler, label=label)


@dataclass(frozen=True)
class SimulatedPath:
    """A simulated chain path with clean and possibly contaminated returns.

    states holds x_0..x_T; the return arrays have length T.  Wherever
    outlier_mask is False the observed return equals the clean one bitwise.
    """

    states: np.ndarray
    clean_returns: ReturnSeries
    observed_returns: ReturnSeries
    outlier_mask: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int)
        mask = np.asarray(self.outlier_mask, dtype=bool)
        t = len(self.clean_returns)
        if states.shape != (t + 1,):
            raise ValueError("states must have one more entry than the returns")
        if len(self.observed_returns) != t or mask.shape != (t,):
            raise ValueError("returns and mask lengths are inconsistent")
        clean = self.clean_returns.values
        observed = self.observed_returns.values
        if not np.array_equal(clean[~mask], observed[~mask]):
            raise ValueError("observed must equal clean wherever the mask is False")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outlier_mask", mask)

    @property
    def horizon(self) -> int:
        return len(self.clean_returns)


def simulate_hmm(
    model: RegimeModel, x0: StateDistribution, horizon: int, seed: int = 0
) -> SimulatedPath:
    """Sample a chain path and the returns it drives.

    y_{k+1} = drift[x_k] + vol[x_k] * w_{k+1} with i.i.d. standard normal
    shocks; the chain moves by the column of the transition matrix indexed
    by its current state.  Reproducible under a fixed seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    n = model.n_states
    states = np.empty(horizon + 1, dtype=int)
    states[0] = rng.choice(n, p=x0.probs)
    shocks = rng.standard_normal(horizon)
    returns = np.empty(horizon)
    for k in range(horizon):
        s = states[k]
        returns[k] = model.drift[s] + model.vol[s] * shocks[k]
        states[k + 1] = rng.choice(n, p=model.transition[:, s])
    series = ReturnSeries(returns)
    return SimulatedPath(
        states=states,
        clean_returns=series,
        observed_returns=ReturnSeries(returns.copy()),
        outlier_mask=np.zeros(horizon, dtype=bool),
    )


def contaminate(path: SimulatedPath, spec: ContaminationSpec, seed: int = 0) -> SimulatedPath:
    """Replace selected observations with distorting values.

    Starts from the clean returns, so applying a spec twice gives the same
    result; states are never touched and the distortion draws come from
    their own stream, independent of everything in the path.
    """
    clean = path.clean_returns.values
    t = path.horizon
    observed = clean.copy()
    mask = np.zeros(t, dtype=bool)
    if spec.mechanism == "fixed":
        for pos, value in zip(spec.positions, spec.values):
            if pos > t:
                raise ValueError(f"position {pos} out of range for horizon {t}")
            observed[pos - 1] = value
            mask[pos - 1] = True
    elif spec.mechanism == "iid":
        rng = np.random.default_rng(seed)
        mask = rng.random(t) < spec.rate
        n_hit = int(mask.sum())
        if n_hit:
            observed[mask] = np.asarray(spec.sampler(rng, n_hit), dtype=float)
    return SimulatedPath(
        states=path.states.copy(),
        clean_returns=ReturnSeries(clean.copy()),
        observed_returns=ReturnSeries(observed),
        outlier_mask=mask,
    )


def least_favorable_contaminator(
    ideal_mean: float,
    ideal_sampler,
    rate: float,
    rho: float,
    ideal_pdf=None,
    ideal_sd: float | None = None,
    cutoff_sds: float = 12.0,
    check_size: int = 200_000,
    check_seed: int = 12345,
):
    """Sampler for the least-favorable distorting law of the minimax problem.

    The target density is proportional to (|y - mean|/rho - 1)_+ times the
    ideal density; draws come from rejection sampling against the ideal
    sampler with the acceptance weight normalized over a cutoff interval of
    ``cutoff_sds`` ideal standard deviations around the mean.  Before
    returning, the mass-one condition linking rho to the rate is verified:
    by quadrature (tolerance 1e-6) when a density is supplied, otherwise by
    Monte Carlo within 5 standard errors.
    """
    if not (0.0 < rate < 1.0):
        raise ValueError("rate must lie in (0, 1)")
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    target = rate / (1.0 - rate)
    if ideal_pdf is not None:

        def upper(y):
            return ((y - ideal_mean) / rho - 1.0) * ideal_pdf(y)

        def lower(y):
            return ((ideal_mean - y) / rho - 1.0) * ideal_pdf(y)

        hi, _ = quad(upper, ideal_mean + rho, np.inf, limit=200)
        lo, _ = quad(lower, -np.inf, ideal_mean - rho, limit=200)
        residual = abs((hi + lo) / target - 1.0)
        if residual > 1e-6:
            raise ValueError(
                f"rho={rho} is inconsistent with rate={rate}: "
                f"relative mass residual {residual:.3e}"
            )
        check_draws = None
    else:
        check_rng = np.random.default_rng(check_seed)
        check_draws = np.asarray(ideal_sampler(check_rng, check_size), float)
        excess = np.clip(np.abs(check_draws - ideal_mean) / rho - 1.0, 0.0, None)
        se = float(excess.std(ddof=1) / np.sqrt(check_size))
        if abs(float(excess.mean()) - target) > 5.0 * max(se, 1e-12):
            raise ValueError(
                f"rho={rho} is inconsistent with rate={rate}: "
                f"MC mass {excess.mean():.6f} vs target {target:.6f}"
            )

    if ideal_sd is None:
        if check_draws is None:
            sd_rng = np.random.default_rng(check_seed)
            check_draws = np.asarray(ideal_sampler(sd_rng, check_size), float)
        ideal_sd = float(check_draws.std(ddof=1))
    w_max = cutoff_sds * ideal_sd / rho - 1.0
    if w_max <= 0.0:
        raise ValueError(
            f"rho={rho} exceeds the {cutoff_sds}-sd sampling cutoff; "
            "no rejection envelope available"
        )

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        filled = 0
        batch = max(4 * size, 1024)
        while filled < size:
            y = np.asarray(ideal_sampler(rng, batch), float)
            w = np.clip(np.abs(y - ideal_mean) / rho - 1.0, 0.0, None)
            accepted = y[rng.random(batch) * w_max < w]
            take = min(accepted.size, size - filled)
            out[filled : filled + take] = accepted[:take]
            filled += take
        return out

    return sampler


def stationary_return_std(model: RegimeModel) -> float:
    """Stationary standard deviation of the model's returns."""
    try:
        pi = stationary_distribution(model).probs
    except RuntimeError:
        pi = np.full(model.n_states, 1.0 / model.n_states)
    second = float(pi @ (model.vol**2 + model.drift**2))
    mean = float(pi @ model.drift)
    return float(np.sqrt(max(second - mean**2, 0.0)))


def preset_contamination(
    name: str, model: RegimeModel, positions=DEFAULT_OUTLIER_POSITIONS
) -> ContaminationSpec:
    """Named outlier presets in units of the model's stationary return sd."""
    if name == "none":
        return ContaminationSpec.none()
    if name == "considerable":
        mult = CONSIDERABLE_SDS
    elif name == "severe":
        mult = SEVERE_SDS
    else:
        raise ValueError(f"unknown contamination preset {name!r}")
    value = mult * stationary_return_std(model)
    return ContaminationSpec.fixed(positions, value, label=name)
