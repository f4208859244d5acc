"""Scikit-learn style facade over the batch estimation engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .engine import BatchConfig, run
from .filters import init_filters, normalize, rescale, step
from .measure import ReferenceMeasure, gamma_vector
from .model import ReturnSeries, StateDistribution
from .validation import as_return_values

__all__ = ["RegimeSwitchingEstimator"]


class RegimeSwitchingEstimator(BaseEstimator):
    """Regime-switching return model estimator with a fit/predict interface.

    Parameters mirror the engine's BatchConfig.  ``fit`` consumes a 1-d
    array of log-returns (or a single-column 2-d array) and exposes the
    fitted parameters as ``drift_``, ``vol_`` and ``transition_`` plus the
    full estimation trace as ``trace_``.  ``predict`` produces one-step
    ahead conditional-mean forecasts under the fitted parameters.

    Parameters
    ----------
    n_states : number of regimes.
    mode : "robust" (outlier-resistant pipeline) or "classical".
    batch_len : observations per parameter update.
    alpha : clipping target for the likelihood-ratio bound; 1.0 disables
        all robustification and reproduces the classical estimator.
    seed : seed for every stochastic ingredient of the run.
    mad_floor : lower bound for fitted volatilities (robust mode); defaults
        to 1e-4 times the scaled MAD of the input.
    reference : reference-measure scale rule ("auto", "unit", "std", "mad").
    """

    def __init__(
        self,
        n_states: int = 2,
        mode: str = "robust",
        batch_len: int = 10,
        alpha: float = 0.95,
        seed: int = 0,
        mad_floor: float | None = None,
        reference: str = "auto",
    ):
        self.n_states = n_states
        self.mode = mode
        self.batch_len = batch_len
        self.alpha = alpha
        self.seed = seed
        self.mad_floor = mad_floor
        self.reference = reference

    def _config(self) -> BatchConfig:
        return BatchConfig(
            batch_len=self.batch_len,
            mode=self.mode,
            alpha=self.alpha,
            mad_floor=self.mad_floor,
            seed=self.seed,
            reference=self.reference,
        )

    def fit(self, X, y=None):
        values = as_return_values(X)
        trace = run(ReturnSeries(values), self.n_states, self._config())
        self.trace_ = trace
        self.drift_ = trace.final_model.drift.copy()
        self.vol_ = trace.final_model.vol.copy()
        self.transition_ = trace.final_model.transition.copy()
        self.breakdown_ = trace.breakdown
        self.forecasts_ = trace.forecasts.copy()
        self.state_probs_ = trace.state_probs.copy()
        self.n_features_in_ = 1
        return self

    def _filter(self, values: np.ndarray) -> np.ndarray:
        model = self.trace_.final_model
        ref = ReferenceMeasure(self.trace_.reference_sigma)
        x0 = StateDistribution.uniform(model.n_states)
        bank = init_filters(x0)
        probs = np.empty((values.size, model.n_states))
        for j, obs in enumerate(values):
            bank = step(bank, model, gamma_vector(model, float(obs), ref), float(obs))
            bank = rescale(bank)
            probs[j] = normalize(bank).state.probs
        return probs

    def predict(self, X) -> np.ndarray:
        """One-step-ahead forecasts under the fitted parameters.

        Entry t is the conditional mean of the next return given X[: t+1].
        """
        check_is_fitted(self, "trace_")
        values = as_return_values(X)
        probs = self._filter(values)
        model = self.trace_.final_model
        return probs @ model.transition.T @ model.drift

    def predict_proba(self, X) -> np.ndarray:
        """Filtered state probabilities under the fitted parameters."""
        check_is_fitted(self, "trace_")
        return self._filter(as_return_values(X))
