"""Flat exponential sums, generalized Riesz products and rank-one flow simulation."""

from .construction import (
    DivergentSchedule,
    FrequencyParams,
    ScheduleError,
    StageGeometry,
    TowerSchedule,
    derive_gammas,
    derive_planar_frames,
    derive_stage_geometry,
)
from .expsum import (
    ExpSum1D,
    ExpSum2D,
    NyquistViolation,
    SampledDensity,
    eval_grid,
    eval_grid_2d,
    eval_point,
)

__version__ = "0.1.0"

__all__ = [
    "DivergentSchedule", "FrequencyParams", "ScheduleError", "StageGeometry",
    "TowerSchedule", "derive_gammas", "derive_planar_frames", "derive_stage_geometry",
    "ExpSum1D", "ExpSum2D", "NyquistViolation", "SampledDensity", "eval_grid",
    "eval_grid_2d", "eval_point",
]
