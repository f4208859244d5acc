"""Minimax-optimal reconstruction under substitutive contamination.

Given an ideal scalar law and a contamination rate r, the worst-case-MSE
optimal reconstruction of the ideal observation from a possibly replaced one
is a clip of the discrepancy from the ideal mean at a radius rho.  rho is
pinned down by requiring the least-favorable contaminating density, which is
proportional to the positive part of (|y - mean|/rho - 1) times the ideal
density, to integrate to one.  This module solves for rho, evaluates the
saddle-point risk, and empirically stress-tests the saddle property.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

__all__ = [
    "SoProblem",
    "SaddleCheck",
    "SaddleReport",
    "solve_rho",
    "reconstruct",
    "saddle_risk",
    "verify_saddle_point",
]


@dataclass(frozen=True)
class SoProblem:
    """A scalar substitutive-contamination reconstruction problem.

    ideal_sampler(rng, size) draws from the ideal law; ideal_pdf, when
    available, enables quadrature instead of Monte Carlo.  rho is None until
    solved (see :func:`solve_rho` / :meth:`solved`).
    """

    ideal_mean: float
    ideal_var: float
    rate: float
    ideal_sampler: Callable[[np.random.Generator, int], np.ndarray]
    ideal_pdf: Callable[[np.ndarray], np.ndarray] | None = None
    rho: float | None = None

    def __post_init__(self):
        if not (0.0 < self.rate < 1.0):
            raise ValueError("rate must lie in (0, 1)")
        if self.ideal_var < 0.0:
            raise ValueError("ideal_var must be non-negative")
        if self.rho is not None and not self.rho > 0.0:
            raise ValueError("rho must be positive once solved")

    def solved(self, **kwargs) -> "SoProblem":
        """Return a copy with rho solved via :func:`solve_rho`."""
        rho = solve_rho(
            self.ideal_mean,
            self.rate,
            ideal_pdf=self.ideal_pdf,
            ideal_sampler=self.ideal_sampler,
            **kwargs,
        )
        return replace(self, rho=rho)


def _excess_mean_quad(ideal_mean, ideal_pdf, rho) -> float:
    """E (|y - mean|/rho - 1)_+ under the ideal density, by quadrature."""

    def upper(y):
        return ((y - ideal_mean) / rho - 1.0) * ideal_pdf(y)

    def lower(y):
        return ((ideal_mean - y) / rho - 1.0) * ideal_pdf(y)

    hi, _ = quad(upper, ideal_mean + rho, np.inf, limit=200)
    lo, _ = quad(lower, -np.inf, ideal_mean - rho, limit=200)
    return hi + lo


def solve_rho(
    ideal_mean: float,
    rate: float,
    ideal_pdf=None,
    ideal_sampler=None,
    mc_size: int = 200_000,
    seed: int = 0,
    tol: float = 1e-10,
) -> float:
    """Solve (1-r)/r * E(|y - mean|/rho - 1)_+ = 1 for rho.

    The left side is continuous and strictly decreasing in rho, so a sign
    change bracket is expanded geometrically and the root found by Brent's
    method.  Uses quadrature when a density is given, otherwise a fixed
    Monte-Carlo sample (deterministic under the seed).
    """
    if not (0.0 < rate < 1.0):
        raise ValueError("rate must lie in (0, 1)")
    factor = (1.0 - rate) / rate
    if ideal_pdf is not None:

        def h(rho):
            return factor * _excess_mean_quad(ideal_mean, ideal_pdf, rho) - 1.0

    elif ideal_sampler is not None:
        rng = np.random.default_rng(seed)
        draws = np.abs(np.asarray(ideal_sampler(rng, mc_size), float) - ideal_mean)

        def h(rho):
            return factor * float(np.clip(draws / rho - 1.0, 0.0, None).mean()) - 1.0

    else:
        raise ValueError("either ideal_pdf or ideal_sampler is required")

    lo, hi = 1e-8, 1.0
    for _ in range(200):
        if h(lo) > 0.0:
            break
        lo /= 8.0
    else:
        raise ValueError(f"no lower bracket: h({lo}) = {h(lo)}")
    for _ in range(200):
        if h(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise ValueError(f"no upper bracket: h({hi}) = {h(hi)}")
    return float(brentq(h, lo, hi, xtol=tol, rtol=8.9e-16))


def reconstruct(problem: SoProblem, y):
    """Minimax reconstruction: mean + clipped discrepancy.

    Equal to y whenever |y - mean| <= rho; 1-Lipschitz and monotone in y.
    Accepts scalars or arrays.
    """
    if problem.rho is None:
        raise ValueError("rho not solved; call solved() first")
    arr = np.asarray(y, dtype=float)
    clipped = np.clip(arr - problem.ideal_mean, -problem.rho, problem.rho)
    out = problem.ideal_mean + clipped
    return float(out) if arr.ndim == 0 else out


def saddle_risk(problem: SoProblem, mc_size: int = 200_000, seed: int = 0) -> float:
    """Value of the minimax risk: var - (1-r) * E min(|D|, rho)^2."""
    if problem.rho is None:
        raise ValueError("rho not solved; call solved() first")
    rho = problem.rho
    m = problem.ideal_mean
    if problem.ideal_pdf is not None:

        def integrand(y):
            return min((y - m) ** 2, rho**2) * problem.ideal_pdf(y)

        val, _ = quad(integrand, -np.inf, np.inf, points=[m - rho, m, m + rho], limit=400)
    else:
        rng = np.random.default_rng(seed)
        d = np.asarray(problem.ideal_sampler(rng, mc_size), float) - m
        val = float(np.minimum(d * d, rho**2).mean())
    return problem.ideal_var - (1.0 - problem.rate) * val


def _empirical_risk(problem, reconstruction, contaminator, rng, mc_size):
    """MSE of a reconstruction when each draw is replaced with prob r."""
    ideal = np.asarray(problem.ideal_sampler(rng, mc_size), float)
    if contaminator is None:
        observed = ideal
    else:
        hit = rng.random(mc_size) < problem.rate
        observed = ideal.copy()
        n_hit = int(hit.sum())
        if n_hit:
            observed[hit] = np.asarray(contaminator(rng, n_hit), float)
    err = (ideal - reconstruction(observed)) ** 2
    return float(err.mean()), float(err.std(ddof=1) / np.sqrt(mc_size))


@dataclass(frozen=True)
class SaddleCheck:
    """Risk of the clipped reconstruction under one contaminator."""

    name: str
    risk: float
    std_error: float
    margin: float  # least-favorable risk minus this risk (>= -2 se expected)


@dataclass(frozen=True)
class SaddleReport:
    """Empirical saddle-point stress test.

    No alternative contaminator should push the clipped reconstruction above
    the least-favorable risk, and no alternative reconstruction should beat
    the clipped one under the least-favorable contaminator, beyond Monte
    Carlo noise.
    """

    rho: float
    rate: float
    theoretical_risk: float
    least_favorable_risk: float
    least_favorable_se: float
    contaminator_checks: tuple
    reconstruction_risks: dict
    all_within: bool

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "rate": self.rate,
            "theoretical_risk": self.theoretical_risk,
            "least_favorable_risk": self.least_favorable_risk,
            "least_favorable_se": self.least_favorable_se,
            "contaminators": [
                {
                    "name": c.name,
                    "risk": c.risk,
                    "std_error": c.std_error,
                    "margin": c.margin,
                }
                for c in self.contaminator_checks
            ],
            "reconstruction_risks": dict(self.reconstruction_risks),
            "all_within": self.all_within,
        }


def verify_saddle_point(
    problem: SoProblem,
    least_favorable,
    alternative_contaminators: dict | None = None,
    mc_size: int = 200_000,
    seed: int = 0,
) -> SaddleReport:
    """Stress-test the saddle property by simulation.

    least_favorable(rng, size) must sample the least-favorable contaminating
    law (see the simulation module).  Alternatives default to point masses
    inside and outside the clipping region plus a far-out mass.
    """
    if problem.rho is None:
        raise ValueError("rho not solved; call solved() first")
    rho, m = problem.rho, problem.ideal_mean
    if alternative_contaminators is None:
        alternative_contaminators = {
            "inside_half_rho": lambda rng, size: np.full(size, m + 0.5 * rho),
            "at_two_rho": lambda rng, size: np.full(size, m + 2.0 * rho),
            "far_out": lambda rng, size: np.full(size, m + 10.0 * rho),
        }

    rng = np.random.default_rng(seed)
    f0 = lambda obs: reconstruct(problem, obs)
    lf_risk, lf_se = _empirical_risk(problem, f0, least_favorable, rng, mc_size)

    checks = []
    ok = True
    for name, sampler in alternative_contaminators.items():
        risk, se = _empirical_risk(problem, f0, sampler, rng, mc_size)
        margin = lf_risk - risk
        within = risk <= lf_risk + 2.0 * np.hypot(se, lf_se)
        ok = ok and within
        checks.append(SaddleCheck(name=name, risk=risk, std_error=se, margin=margin))

    identity = lambda obs: obs
    hard_reject = lambda obs: np.where(np.abs(obs - m) > rho, m, obs)
    recon_risks = {}
    for name, recon in (("identity", identity), ("hard_rejection", hard_reject)):
        risk, _ = _empirical_risk(problem, recon, least_favorable, rng, mc_size)
        recon_risks[name] = risk

    return SaddleReport(
        rho=rho,
        rate=problem.rate,
        theoretical_risk=saddle_risk(problem),
        least_favorable_risk=lf_risk,
        least_favorable_se=lf_se,
        contaminator_checks=tuple(checks),
        reconstruction_risks=recon_risks,
        all_within=ok,
    )
