"""Solve the smoothing problem and check the result."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..sim.collision import check_collision
from ..sim.types import Footprint, VehicleState
from .lm import LmSettings, levenberg_marquardt
from .problem import (
    OptProblem,
    build_residuals,
    clearances,
    cost_breakdown,
    jacobian,
    rollout_controls,
)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    initial_cost: float
    final_cost: float
    controls: np.ndarray              # (N, 2), clamped to the limits
    trajectory: np.ndarray            # (N+1, 4), rollout of ``controls``
    breakdown: dict[str, float]
    initial_breakdown: dict[str, float]
    reason: str
    gradient_norm: float
    post_check: bool | None = None
    costs: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"converged: {str(self.converged).lower()}",
                 f"reason: {self.reason}",
                 f"iterations: {self.iterations}",
                 f"initial_cost: {self.initial_cost!r}",
                 f"final_cost: {self.final_cost!r}",
                 f"gradient_norm: {self.gradient_norm!r}",
                 f"post_check_passed: {'n/a' if self.post_check is None else str(self.post_check).lower()}"]
        for term, val in self.breakdown.items():
            lines.append(f"cost.{term}: {val!r} (initial {self.initial_breakdown[term]!r})")
        return "\n".join(lines) + "\n"


def solve_lm(p: OptProblem) -> SolveReport:
    """Levenberg-Marquardt from the guiding controls, then clamp, re-integrate and check."""
    cfg = p.config
    settings = LmSettings(max_iterations=cfg.max_iterations, lambda0=cfg.lambda0)
    res = levenberg_marquardt(lambda a: build_residuals(p, a), lambda a: jacobian(p, a),
                              p.a_init.ravel(), settings)
    controls = np.clip(res.x.reshape(-1, 2), p.limits.low, p.limits.high)
    traj = rollout_controls(p.x0, controls, p.dt, p.wheelbase)
    breakdown = cost_breakdown(p, controls)
    report = SolveReport(
        converged=res.converged, iterations=res.iterations, initial_cost=res.initial_cost,
        final_cost=sum(breakdown.values()), controls=controls, trajectory=traj,
        breakdown=breakdown, initial_breakdown=cost_breakdown(p, p.a_init), reason=res.reason,
        gradient_norm=res.gradient_norm, costs=res.costs)
    report.post_check = post_collision_check(traj, p)
    return report


def post_collision_check(x_star: np.ndarray, p: OptProblem) -> bool:
    """True iff the ego footprint overlaps no recorded agent at any step (exact rectangle test)."""
    for hist, fp in zip(p.others, p.other_footprints):
        for k in range(x_star.shape[0]):
            if check_collision(VehicleState(*x_star[k]), p.ego_footprint, VehicleState(*hist[k]), fp):
                return False
    return True


def min_clearance(p: OptProblem, traj: np.ndarray) -> float:
    """Smallest circle-cover clearance to any agent over the horizon (inf without agents)."""
    c = clearances(p, traj)
    return float(c.min()) if c.size else float("inf")


def jerk_metric(controls, dt: float) -> float:
    """Mean squared finite-difference jerk of the acceleration sequence.

    Accepts an (N, 2) control array (acceleration in column 1) or a plain
    acceleration sequence.
    """
    a = np.asarray(controls, dtype=float)
    acc = a[:, 1] if a.ndim == 2 else a
    if acc.size < 3:
        raise ValueError("jerk metric needs at least 3 control steps")
    jerk = np.diff(acc) / dt
    return float(np.mean(jerk * jerk))


def homotopy_sides(ego: np.ndarray, others: list[np.ndarray],
                   in_line: float = Footprint().width) -> list[int]:
    """Passing side (+1 / -1 / 0) of the ego relative to each agent.

    Taken at the step of minimum center distance as the sign of the cross
    product between the agent's heading and the relative position (agent
    minus ego): +1 when the agent lies to the left of the ego. Using the
    agent's heading rather than the relative velocity keeps the side defined
    when both vehicles travel at matched speed. An agent whose lateral offset
    is below ``in_line`` is directly ahead or behind and is never passed, so
    its side is 0.
    """
    sides = []
    for hist in others:
        d = hist[:, :2] - ego[:, :2]
        k = int(np.argmin(np.einsum("ij,ij->i", d, d)))
        h = np.array([np.cos(hist[k, 2]), np.sin(hist[k, 2])])
        lateral = h[0] * d[k, 1] - h[1] * d[k, 0]
        sides.append(0 if abs(lateral) < in_line else int(np.sign(lateral)))
    return sides
