"""Trajectory post-optimization around a guiding reference."""

from .lm import LmResult, LmSettings, levenberg_marquardt
from .problem import (
    TERMS,
    OptConfig,
    OptProblem,
    build_residuals,
    circle_cover,
    clearances,
    collision_matrix,
    cost_breakdown,
    jacobian,
    pair_clearances,
    rollout_batch,
    rollout_controls,
)
from .solve import (
    SolveReport,
    homotopy_sides,
    jerk_metric,
    min_clearance,
    post_collision_check,
    solve_lm,
)
