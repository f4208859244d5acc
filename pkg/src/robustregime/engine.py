"""Batch estimation engine.

Runs the full cycle over consecutive batches of observations: derive the
reference measure, calibrate the ratio clipping (robust mode), run the
filter recursions, update drift/vol from the per-batch weight triangle
(exact weighted MLE classically, weighted median/MAD then one-step bounded
updates robustly), update the transition matrix from the jump/occupation
quotients, and carry the filtered state distribution into the next batch.

Classical mode propagates filter breakdown into the trace and halts, which
is the expected failure on severe outliers.  Robust mode is built not to
break down: clipped ratios keep the normalizer alive and the bounded
influence function caps what any one observation can do to the parameters.

alpha = 1 disables the ratio clipping entirely and switches the M-step to
the exact weighted maximum-likelihood update, reproducing the classical
estimator through the robust code path (a wiring check used by tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filters import BreakdownError, FilterEstimates, init_filters, normalize, rescale, step
from .initialize import InitResult, classical_init, robust_init
from .measure import (
    LambdaCalibration,
    ReferenceMeasure,
    calibrate_clipping,
    gamma_vector,
    robust_gamma_vector,
    scaled_mad,
)
from .model import RegimeModel, ReturnSeries, StateDistribution, stationary_distribution
from .robust import (
    MbreConstants,
    WeightedSample,
    mc_consistency_factor,
    mbre_if,
    weighted_mad,
    weighted_median,
)
from .simulate import simulate_hmm

__all__ = [
    "BatchConfig",
    "WeightTriangle",
    "BatchRecord",
    "EstimationTrace",
    "build_weight_triangle",
    "m_step_classical",
    "m1_weighted_mle",
    "m1_robust",
    "m2_pi",
    "flag_outliers",
    "run",
]

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class BatchConfig:
    """Knobs of one estimation run.

    reference "auto" resolves to the plain standard normal denominator in
    classical mode and to the MAD-based data-driven scale in robust mode.
    mad_floor defaults to 1e-4 times the scaled MAD of the whole series.
    """

    batch_len: int = 10
    mode: str = "robust"
    alpha: float = 0.95
    mad_floor: float | None = None
    seed: int = 0
    reference: str = "auto"  # "auto" | "unit" | "std" | "mad"
    calib_size: int = 10_000
    calib_refresh: str = "batch"  # "batch" | "run"
    consistency_reps: int = 1000
    gmm_restarts: int = 5
    flag_quantile: float = 0.01
    flag_mc_batches: int = 200
    noise_reassign: str = "random"
    freeze_tol: float = 1e-6

    def __post_init__(self):
        if self.batch_len < 2:
            raise ValueError("batch_len must be at least 2")
        if self.mode not in ("classical", "robust"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.reference not in ("auto", "unit", "std", "mad"):
            raise ValueError(f"unknown reference {self.reference!r}")
        if self.calib_refresh not in ("batch", "run"):
            raise ValueError(f"unknown calib_refresh {self.calib_refresh!r}")
        if not (0.0 < self.flag_quantile < 1.0):
            raise ValueError("flag_quantile must lie in (0, 1)")

    @property
    def clipping_active(self) -> bool:
        return self.mode == "robust" and self.alpha < 1.0

    def resolved_reference(self) -> str:
        if self.reference != "auto":
            return self.reference
        return "mad" if self.mode == "robust" else "unit"


@dataclass(frozen=True)
class WeightTriangle:
    """Normalized per-state observation weights for one batch.

    weights[i, l-1] is the share of observation l in state i's update; live
    rows sum to one.  noether reports max_l w^2 / sum_l w^2 per state, the
    diagnostic for single observations dominating a state's estimate.
    """

    weights: np.ndarray
    frozen: np.ndarray
    noether: np.ndarray


@dataclass(frozen=True)
class BatchRecord:
    """Everything the engine decided during one batch."""

    index: int
    start: int
    length: int
    drift: np.ndarray
    vol: np.ndarray
    transition: np.ndarray
    frozen: np.ndarray
    weights: np.ndarray
    noether: np.ndarray
    calibration: dict | None = None
    psi_contributions: np.ndarray | None = None
    scores: np.ndarray | None = None
    flags: np.ndarray | None = None
    breakdown: bool = False


@dataclass
class EstimationTrace:
    """Per-step and per-batch output of a run."""

    mode: str
    n_states: int
    batch_len: int
    alpha: float
    seed: int
    reference_sigma: float
    mad_floor: float
    init_method: str
    observations: np.ndarray
    state_probs: np.ndarray
    forecasts: np.ndarray
    batches: list = field(default_factory=list)
    outlier_scores: np.ndarray | None = None
    outlier_flags: np.ndarray | None = None
    flag_threshold: float | None = None
    final_model: RegimeModel | None = None
    breakdown: bool = False
    breakdown_index: int | None = None
    breakdown_reason: str | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_processed(self) -> int:
        return self.state_probs.shape[0]


def build_weight_triangle(x_hat_path, occupation, freeze_eps: float) -> WeightTriangle:
    """Per-state weights from the stored filtered state path.

    x_hat_path[l-1] is the filtered state distribution at time l-1 for
    l = 1..k, so row i of the result is proportional to the path's mass in
    state i, normalized to sum to one.  States whose filtered occupation or
    path mass falls below freeze_eps get a zero row and are marked frozen;
    their parameters are left untouched by the M-step.
    """
    path = np.asarray(x_hat_path, dtype=float)
    raw = path.T.copy()  # (N, k)
    mass = raw.sum(axis=1)
    occ = np.asarray(occupation, dtype=float)
    frozen = (occ <= freeze_eps) | (mass <= freeze_eps)
    weights = np.zeros_like(raw)
    live = ~frozen
    weights[live] = raw[live] / mass[live, None]
    noether = np.zeros(raw.shape[0])
    sq = weights**2
    denom = sq.sum(axis=1)
    ok = denom > 0.0
    noether[ok] = sq.max(axis=1)[ok] / denom[ok]
    return WeightTriangle(weights=weights, frozen=frozen, noether=noether)


def m_step_classical(
    estimates: FilterEstimates, prev_model: RegimeModel, freeze_eps: float
) -> RegimeModel:
    """Maximum-likelihood update from the batch-end filter quotients.

    drift_i = obs_sum_i / occupation_i, vol_i from the standard second-moment
    quotient, transition columns from jumps/occupation.  States with
    occupation below freeze_eps keep their previous parameters; columns are
    renormalized to sum to one.  A materially negative variance radicand
    signals inconsistent filters and raises.
    """
    occ = estimates.occupation
    live = occ > freeze_eps
    drift = prev_model.drift.copy()
    vol = prev_model.vol.copy()
    drift[live] = estimates.obs_sum[live] / occ[live]
    radicand = (
        estimates.obs_sq_sum[live]
        - 2.0 * drift[live] * estimates.obs_sum[live]
        + drift[live] ** 2 * occ[live]
    ) / occ[live]
    if np.any(radicand < -1e-12):
        raise ValueError(
            f"negative variance radicand {radicand.min():.3e}: filters inconsistent"
        )
    vol[live] = np.sqrt(np.clip(radicand, 0.0, None))
    vol = np.maximum(vol, _TINY)  # keeps the model constructible
    transition = m2_pi(estimates, prev_model, freeze_eps)
    return RegimeModel(transition=transition, drift=drift, vol=vol)


def m2_pi(
    estimates: FilterEstimates, prev_model: RegimeModel, freeze_eps: float
) -> np.ndarray:
    """Transition update: column r is jumps[:, r] / occupation[r].

    Columns of states with occupation below freeze_eps are carried over from
    the previous model; all columns are clipped to [0, 1] and renormalized.
    """
    occ = estimates.occupation
    transition = prev_model.transition.copy()
    live = occ > freeze_eps
    cols = estimates.jumps[:, live] / occ[live][None, :]
    transition[:, live] = cols
    transition = np.clip(transition, 0.0, None)
    sums = transition.sum(axis=0)
    dead = sums <= 0.0
    if np.any(dead):
        transition[:, dead] = prev_model.transition[:, dead]
        sums = transition.sum(axis=0)
    transition = transition / sums[None, :]
    return np.clip(transition, 0.0, 1.0)


def m1_weighted_mle(triangle: WeightTriangle, y_batch, prev_drift, prev_vol, floor: float):
    """Exact weighted maximum-likelihood drift/vol from the weight triangle.

    drift_i is the weighted mean of the batch, vol_i the weighted root mean
    square deviation about it.  Frozen states keep their previous values.
    """
    y = np.asarray(y_batch, dtype=float)
    drift = np.asarray(prev_drift, dtype=float).copy()
    vol = np.asarray(prev_vol, dtype=float).copy()
    for i in np.flatnonzero(~triangle.frozen):
        w = triangle.weights[i]
        mean = float(w @ y)
        drift[i] = mean
        vol[i] = max(float(np.sqrt(w @ (y - mean) ** 2)), floor)
    return drift, vol


def m1_robust(
    triangle: WeightTriangle,
    y_batch,
    prev_drift,
    prev_vol,
    constants: MbreConstants,
    first_batch: bool,
    floor: float,
    consistency_reps: int = 1000,
    seed: int = 0,
):
    """Robust drift/vol update for one batch.

    The first batch anchors each live state at the weighted median and the
    scaled weighted MAD (with a Monte-Carlo consistency factor matched to
    the actual weights).  Later batches take a single bounded-influence step
    from the previous estimate: drift moves by the weighted mean of the
    clipped location scores, vol by the exponential of the weighted mean of
    the clipped scale scores, which keeps it positive by construction.

    Returns (drift, vol, psi) where psi[i, l-1] holds the weighted
    (location, scale) score contribution of observation l to state i.
    """
    y = np.asarray(y_batch, dtype=float)
    drift = np.asarray(prev_drift, dtype=float).copy()
    vol = np.asarray(prev_vol, dtype=float).copy()
    n, k = triangle.weights.shape
    psi = np.zeros((n, k, 2))
    rng = np.random.default_rng(seed)
    for i in np.flatnonzero(~triangle.frozen):
        w = triangle.weights[i]
        if first_batch:
            sample = WeightedSample(y, w)
            center = weighted_median(sample)
            c = mc_consistency_factor(
                w, mc_reps=consistency_reps, seed=int(rng.integers(2**63))
            )
            scale = weighted_mad(sample, center, c)
            drift[i] = center
            vol[i] = max(scale, floor)
        else:
            u = (y - drift[i]) / vol[i]
            loc, sc = mbre_if(u, constants)
            psi[i, :, 0] = w * loc
            psi[i, :, 1] = w * sc
            new_drift = drift[i] + vol[i] * float(psi[i, :, 0].sum())
            new_vol = vol[i] * float(np.exp(psi[i, :, 1].sum()))
            drift[i] = new_drift
            vol[i] = max(new_vol, floor)
    return drift, vol, psi


def flag_outliers(triangle: WeightTriangle, y_batch, drift, vol, threshold: float):
    """Score each observation by its unclipped influence at the fitted model.

    The score is the Euclidean norm of the weight-mixed raw location/scale
    score pair (u, u^2 - 1) with u the standardized residual per state;
    observations whose score exceeds the Monte-Carlo calibrated threshold
    are flagged.
    """
    y = np.asarray(y_batch, dtype=float)
    u = (y[None, :] - np.asarray(drift)[:, None]) / np.asarray(vol)[:, None]
    loc = (triangle.weights * u).sum(axis=0)
    sc = (triangle.weights * (u * u - 1.0)).sum(axis=0)
    scores = np.hypot(loc, sc)
    return scores, scores > threshold


def _calibrate_flag_threshold(model, x0, cfg: BatchConfig, ref, seed: int) -> float:
    """Empirical 1 - q score quantile under the fitted model, clean data."""
    k = cfg.batch_len
    eps = cfg.freeze_tol * k
    pooled = []
    rng = np.random.default_rng(seed)
    for _ in range(cfg.flag_mc_batches):
        path = simulate_hmm(model, x0, k, seed=int(rng.integers(2**63)))
        y = path.observed_returns.values
        bank = init_filters(x0)
        x_path = np.empty((k, model.n_states))
        prev = x0.probs
        try:
            for j, obs in enumerate(y):
                g = gamma_vector(model, float(obs), ref)
                bank = step(bank, model, g, float(obs))
                bank = rescale(bank)
                x_path[j] = bank.eta_x / bank.normalizer
                prev = x_path[j]
        except BreakdownError:
            continue
        est = normalize(bank)
        tri = build_weight_triangle(
            np.vstack([x0.probs[None, :], x_path[:-1]]), est.occupation, eps
        )
        scores, _ = flag_outliers(tri, y, model.drift, model.vol, np.inf)
        pooled.append(scores)
    if not pooled:
        return float("inf")
    return float(np.quantile(np.concatenate(pooled), 1.0 - cfg.flag_quantile))


def _resolve_reference(values, cfg: BatchConfig) -> ReferenceMeasure:
    kind = cfg.resolved_reference()
    if kind == "unit":
        return ReferenceMeasure(1.0)
    return ReferenceMeasure.from_returns(values, method=kind)


def run(ys, n_states: int, cfg: BatchConfig) -> EstimationTrace:
    """Estimate an n-state model over a return series, batch by batch.

    Initialization is mixture-based (robust variant when clipping is
    active); each batch runs the filters from the carried state
    distribution, updates parameters, and hands both on.  The trailing
    partial batch is processed at its actual length.  In classical mode a
    filter breakdown is recorded in the trace and the run halts; in robust
    mode a breakdown is a bug and the error propagates.
    """
    series = ys if isinstance(ys, ReturnSeries) else ReturnSeries(np.asarray(ys, float))
    values = series.values
    t_total = values.size
    if t_total < cfg.batch_len:
        raise ValueError(f"need at least batch_len={cfg.batch_len} observations")
    if n_states < 1:
        raise ValueError("n_states must be at least 1")

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_seed = int(seeds[0].generate_state(1)[0] % 2**62)
    calib_rng = np.random.default_rng(seeds[1])
    m1_rng = np.random.default_rng(seeds[2])
    flag_seed = int(seeds[3].generate_state(1)[0] % 2**62)

    robust_pipeline = cfg.clipping_active
    if robust_pipeline:
        init = robust_init(
            series,
            n_states,
            seed=init_seed,
            restarts=cfg.gmm_restarts,
            consistency_reps=cfg.consistency_reps,
            reassign=cfg.noise_reassign,
        )
    else:
        init = classical_init(series, n_states, seed=init_seed, restarts=cfg.gmm_restarts)

    model = init.model
    x_dist = init.x0
    gmad = scaled_mad(values)
    floor = cfg.mad_floor if cfg.mad_floor is not None else max(1e-4 * gmad, 1e-12)
    ref = _resolve_reference(values, cfg)
    constants = MbreConstants()

    flag_threshold = None
    if robust_pipeline:
        flag_threshold = _calibrate_flag_threshold(model, x_dist, cfg, ref, flag_seed)

    state_rows = []
    forecast_rows = []
    score_rows = []
    flag_rows = []
    records = []
    calib = None
    breakdown = False
    breakdown_index = None
    breakdown_reason = None

    starts = list(range(0, t_total, cfg.batch_len))
    for b_idx, start in enumerate(starts):
        yb = values[start : start + cfg.batch_len]
        k = yb.size
        eps = cfg.freeze_tol * k

        calibration_info = None
        if robust_pipeline and (calib is None or cfg.calib_refresh == "batch"):
            predicted = model.transition @ x_dist.probs
            calib = calibrate_clipping(
                model,
                ref,
                predicted,
                alpha=cfg.alpha,
                mc_size=cfg.calib_size,
                seed=int(calib_rng.integers(2**63)),
            )
        if calib is not None:
            calibration_info = {
                "alpha": calib.alpha,
                "clip_b": calib.clip_b,
                "consistency": calib.consistency,
                "sqrt_mean": calib.sqrt_mean,
                "upper_bound": calib.upper_bound,
            }

        bank = init_filters(x_dist)
        x_path = np.empty((k + 1, n_states))
        x_path[0] = x_dist.probs
        failed_at = None
        steps_done = 0
        try:
            for j, obs in enumerate(yb):
                if robust_pipeline:
                    predicted = model.transition @ x_path[j]
                    g = robust_gamma_vector(model, ref, calib, float(obs), predicted)
                else:
                    g = gamma_vector(model, float(obs), ref)
                bank = step(bank, model, g, float(obs))
                bank = rescale(bank)
                x_path[j + 1] = bank.eta_x / bank.normalizer
                state_rows.append(x_path[j + 1].copy())
                forecast_rows.append(float(model.drift @ (model.transition @ x_path[j + 1])))
                steps_done = j + 1
        except BreakdownError as err:
            if robust_pipeline:
                raise
            failed_at = start + steps_done + 1
            breakdown = True
            breakdown_index = failed_at
            breakdown_reason = str(err)

        if breakdown:
            records.append(
                BatchRecord(
                    index=b_idx,
                    start=start + 1,
                    length=steps_done,
                    drift=model.drift.copy(),
                    vol=model.vol.copy(),
                    transition=model.transition.copy(),
                    frozen=np.zeros(n_states, dtype=bool),
                    weights=np.zeros((n_states, k)),
                    noether=np.zeros(n_states),
                    calibration=calibration_info,
                    breakdown=True,
                )
            )
            break

        estimates = normalize(bank)
        triangle = build_weight_triangle(x_path[:k], estimates.occupation, eps)

        psi = None
        if robust_pipeline:
            drift, vol, psi = m1_robust(
                triangle,
                yb,
                model.drift,
                model.vol,
                constants,
                first_batch=(b_idx == 0),
                floor=floor,
                consistency_reps=cfg.consistency_reps,
                seed=int(m1_rng.integers(2**63)),
            )
        else:
            drift, vol = m1_weighted_mle(triangle, yb, model.drift, model.vol, _TINY)
        transition = m2_pi(estimates, model, eps)
        model = RegimeModel(transition=transition, drift=drift, vol=vol)

        scores = flags = None
        if robust_pipeline:
            scores, flags = flag_outliers(triangle, yb, model.drift, model.vol, flag_threshold)
            score_rows.append(scores)
            flag_rows.append(flags)

        records.append(
            BatchRecord(
                index=b_idx,
                start=start + 1,
                length=k,
                drift=model.drift.copy(),
                vol=model.vol.copy(),
                transition=model.transition.copy(),
                frozen=triangle.frozen.copy(),
                weights=triangle.weights.copy(),
                noether=triangle.noether.copy(),
                calibration=calibration_info,
                psi_contributions=psi,
                scores=scores,
                flags=flags,
            )
        )
        x_dist = StateDistribution(np.clip(x_path[k], 0.0, None) / x_path[k].sum())

    trace = EstimationTrace(
        mode=cfg.mode,
        n_states=n_states,
        batch_len=cfg.batch_len,
        alpha=cfg.alpha,
        seed=cfg.seed,
        reference_sigma=ref.sigma_bar,
        mad_floor=floor,
        init_method=init.method,
        observations=values[: len(state_rows)].copy(),
        state_probs=np.asarray(state_rows) if state_rows else np.empty((0, n_states)),
        forecasts=np.asarray(forecast_rows),
        batches=records,
        outlier_scores=np.concatenate(score_rows) if score_rows else None,
        outlier_flags=np.concatenate(flag_rows) if flag_rows else None,
        flag_threshold=flag_threshold,
        final_model=model,
        breakdown=breakdown,
        breakdown_index=breakdown_index,
        breakdown_reason=breakdown_reason,
        metadata={
            "reference": cfg.resolved_reference(),
            "init_frequencies": None
            if init.frequencies is None
            else [float(v) for v in init.frequencies],
            "global_mad": gmad,
            "mad_consistency_quantile": 0.6744897501960817,
            "normal_cdf_at_0.75": 0.7733726476231317,
        },
    )
    return trace
