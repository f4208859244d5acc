"""Built-in demonstration setup: a two-state monthly-return-like model.

192 observations mimic a sixteen-year monthly span; outliers are planted at
steps 40, 80, 130 and 140 via the contamination presets.
"""

from __future__ import annotations

from .model import RegimeModel, StateDistribution, stationary_distribution
from .simulate import (
    DEFAULT_OUTLIER_POSITIONS,
    SimulatedPath,
    contaminate,
    preset_contamination,
    simulate_hmm,
)

__all__ = [
    "DEMO_HORIZON",
    "DEMO_OUTLIER_POSITIONS",
    "demo_model",
    "demo_x0",
    "demo_path",
]

DEMO_HORIZON = 192
DEMO_OUTLIER_POSITIONS = DEFAULT_OUTLIER_POSITIONS


def demo_model() -> RegimeModel:
    """Two regimes: a calm drift-up state and a turbulent drift-down state."""
    return RegimeModel(
        transition=[[0.94, 0.12], [0.06, 0.88]],
        drift=[0.012, -0.008],
        vol=[0.015, 0.045],
    )


def demo_x0(model: RegimeModel | None = None) -> StateDistribution:
    model = model if model is not None else demo_model()
    try:
        return stationary_distribution(model)
    except RuntimeError:
        return StateDistribution.uniform(model.n_states)


def demo_path(
    seed: int = 7,
    contamination: str = "none",
    horizon: int = DEMO_HORIZON,
    positions=DEMO_OUTLIER_POSITIONS,
) -> SimulatedPath:
    """Simulate the demo series, optionally planting preset outliers."""
    model = demo_model()
    clean = simulate_hmm(model, demo_x0(model), horizon, seed=seed)
    spec = preset_contamination(contamination, model, positions=positions)
    if spec.mechanism == "none":
        return clean
    return contaminate(clean, spec, seed=seed + 1)
