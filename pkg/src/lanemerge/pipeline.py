"""Two-stage planning: greedy policy rollout, then local smoothing with a safety net."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .postopt import (
    OptConfig,
    OptProblem,
    SolveReport,
    jerk_metric,
    min_clearance,
    post_collision_check,
    rollout_controls,
    solve_lm,
)
from .sac.policy import PolicyNet
from .sac.train import greedy_episode
from .sim import EpisodeRecord, ScenarioConfig, VehicleState


def rollout_greedy(policy: PolicyNet, scenario: ScenarioConfig, seed: int) -> EpisodeRecord:
    """Execute the deterministic policy for one episode, recording every agent."""
    return greedy_episode(policy, scenario, seed).record


def emergency_brake(x0: VehicleState, dt: float, n: int, a_min: float = -1.0) -> np.ndarray:
    """Straight-wheel braking at ``a_min`` until standstill, then zero input; (n, 2) controls."""
    if a_min >= 0:
        raise ValueError("a_min must be negative")
    out = np.zeros((n, 2))
    v0 = max(x0.v, 0.0)
    n_brake = math.ceil(v0 / (-a_min * dt) - 1e-9) if v0 > 0 else 0
    full = min(n_brake - 1, n) if n_brake else 0
    out[:full, 1] = a_min
    if 0 < n_brake <= n:
        # the last braking step only removes the remaining speed
        out[n_brake - 1, 1] = max(a_min, -(v0 + full * a_min * dt) / dt)
    return out


def problem_from_record(record: EpisodeRecord, scenario: ScenarioConfig,
                        config: OptConfig | None = None) -> OptProblem:
    if config is None:
        config = OptConfig(steer_scale=scenario.desired_speed ** 2 / scenario.wheelbase)
    return OptProblem(
        x_ref=record.ego_array(), a_init=record.action_array(), others=record.other_arrays(),
        x0=record.ego_states[0], dt=scenario.dt, config=config, limits=scenario.action_limits,
        ego_footprint=scenario.ego.footprint,
        other_footprints=[a.footprint for a in scenario.agents[1:]],
        road=scenario.road, wheelbase=scenario.wheelbase)


def _jerk_or_nan(controls: np.ndarray, dt: float) -> float:
    return jerk_metric(controls, dt) if controls.shape[0] >= 3 else float("nan")


@dataclass
class PlanResult:
    seed: int
    rl_states: np.ndarray
    rl_controls: np.ndarray
    report: SolveReport
    states: np.ndarray                 # delivered trajectory
    controls: np.ndarray               # delivered controls
    post_check_passed: bool
    fallback_engaged: bool
    reason: str
    metrics: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"seed: {self.seed}",
                 f"fallback_engaged: {str(self.fallback_engaged).lower()}",
                 f"post_check_passed: {str(self.post_check_passed).lower()}",
                 f"reason: {self.reason}"]
        lines += [f"metric.{k}: {v!r}" for k, v in self.metrics.items()]
        return "\n".join(lines) + "\n" + self.report.to_text()


def plan(policy: PolicyNet, scenario: ScenarioConfig, seed: int,
         opt_config: OptConfig | None = None) -> PlanResult:
    """Roll out the policy, smooth its trajectory, and fall back to braking if unsafe."""
    record = rollout_greedy(policy, scenario, seed)
    problem = problem_from_record(record, scenario, opt_config)
    report = solve_lm(problem)
    if not report.converged:
        fallback, reason = True, f"solver did not converge ({report.reason})"
    elif not report.post_check:
        fallback, reason = True, "post-optimization collision check failed"
    else:
        fallback, reason = False, f"converged ({report.reason})"

    if fallback:
        controls = emergency_brake(problem.x0, scenario.dt, problem.n_steps,
                                   scenario.action_limits.a_min)
        states = rollout_controls(problem.x0, controls, scenario.dt, scenario.wheelbase)
        passed = post_collision_check(states, problem)
    else:
        controls, states, passed = report.controls, report.trajectory, True

    metrics = {
        "rl_jerk": _jerk_or_nan(problem.a_init, scenario.dt),
        "opt_jerk": _jerk_or_nan(controls, scenario.dt),
        "solve_jerk": _jerk_or_nan(report.controls, scenario.dt),
        "min_clearance_rl": min_clearance(problem, problem.x_ref),
        "min_clearance_opt": min_clearance(problem, states),
        "rl_reward": record.total_reward,
        "rl_collided": float(record.collided),
        "iterations": float(report.iterations),
    }
    return PlanResult(seed, problem.x_ref, problem.a_init, report, states, controls, passed,
                      fallback, reason, metrics)


def write_plan_csv(result: PlanResult, dt: float, path: str | Path) -> None:
    """RL and delivered trajectories side by side, one row per step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "rl_x", "rl_y", "rl_theta", "rl_v", "rl_delta", "rl_a",
                    "opt_x", "opt_y", "opt_theta", "opt_v", "opt_delta", "opt_a"])
        n = result.rl_controls.shape[0]
        for k in range(n + 1):
            rl_u = result.rl_controls[k] if k < n else (None, None)
            op_u = result.controls[k] if k < n else (None, None)
            row = [round(k * dt, 10), *result.rl_states[k], *rl_u, *result.states[k], *op_u]
            w.writerow(["" if v is None else repr(float(v)) for v in row])
