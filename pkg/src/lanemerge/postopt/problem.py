"""Least-squares formulation of the trajectory smoothing problem.

Decision variables are the ego controls ``(delta_k, a_k)`` for ``k < N``,
flattened as ``[delta_0, a_0, delta_1, a_1, ...]``. States are never free
variables: every candidate is forward-integrated from the fixed initial
state, so each iterate is dynamically feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..sim.dynamics import WHEELBASE, step_single_track, step_single_track_batch
from ..sim.geometry import RoadBounds
from ..sim.types import Action, ActionLimits, Footprint, VehicleState

TERMS = ("tracking", "jerk", "collision", "boundary", "limits")


@dataclass(frozen=True)
class OptConfig:
    w_track: float = 1.0
    w_jerk: float = 0.5
    w_col: float = 50.0
    d_safe: float = 1.0
    w_limit: float = 1000.0
    # converts steering-rate residuals [rad/s] to lateral-jerk scale [m/s^3]
    steer_scale: float = 25.0 / WHEELBASE
    fd_step: float = 1e-6
    max_iterations: int = 200
    lambda0: float = 1e-4

    def __post_init__(self):
        for name in ("w_track", "w_jerk", "w_col", "w_limit", "steer_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_safe <= 0:
            raise ValueError("d_safe must be > 0")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be > 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "OptConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown optimizer config keys: {', '.join(sorted(unknown))}")
        typed = {}
        for key, value in raw.items():
            try:
                typed[key] = int(value) if key == "max_iterations" else float(value)
            except (TypeError, ValueError):
                raise ValueError(f"{key}: expected a number, got {value!r}") from None
        return cls(**typed)


@dataclass
class OptProblem:
    """Guiding reference, fixed start, frozen agent histories and solver weights."""

    x_ref: np.ndarray                 # (N+1, 4) reference states
    a_init: np.ndarray                # (N, 2) initial controls
    others: list[np.ndarray]          # M arrays of (N+1, 4)
    x0: VehicleState
    dt: float
    config: OptConfig = field(default_factory=OptConfig)
    limits: ActionLimits = field(default_factory=ActionLimits)
    ego_footprint: Footprint = field(default_factory=Footprint)
    other_footprints: list[Footprint] | None = None
    road: RoadBounds | None = None
    wheelbase: float = WHEELBASE

    def __post_init__(self):
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        self.a_init = np.asarray(self.a_init, dtype=float).reshape(-1, 2)
        self.others = [np.asarray(o, dtype=float) for o in self.others]
        n = self.a_init.shape[0]
        if n < 1:
            raise ValueError("need at least one control step")
        if self.x_ref.shape != (n + 1, 4):
            raise ValueError(f"reference must have shape ({n + 1}, 4), got {self.x_ref.shape}")
        for j, o in enumerate(self.others):
            if o.shape != (n + 1, 4):
                raise ValueError(f"history of agent {j + 1} must have shape ({n + 1}, 4), got {o.shape}")
        if self.other_footprints is None:
            self.other_footprints = [Footprint() for _ in self.others]
        if len(self.other_footprints) != len(self.others):
            raise ValueError("one footprint per recorded agent is required")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        self._ego_circles = circle_cover(self.ego_footprint)
        self._agent_circles = [_circle_centers(o[1:], circle_cover(fp)) for o, fp in
                               zip(self.others, self.other_footprints)]
        self._agent_radii = [circle_cover(fp)[1] for fp in self.other_footprints]

    @property
    def n_steps(self) -> int:
        return self.a_init.shape[0]

    @property
    def n_agents(self) -> int:
        return len(self.others)


def circle_cover(fp: Footprint) -> tuple[np.ndarray, float]:
    """Longitudinal offsets and common radius of circles covering the rectangle."""
    n = max(1, math.ceil(fp.length / fp.width))
    seg = fp.length / n
    offsets = -0.5 * fp.length + seg * (np.arange(n) + 0.5)
    return offsets, math.hypot(0.5 * seg, 0.5 * fp.width)


def _circle_centers(states: np.ndarray, cover) -> np.ndarray:
    """Circle centers (..., n_circles, 2) for states (..., 4)."""
    offsets, _ = cover
    c, s = np.cos(states[..., 2]), np.sin(states[..., 2])
    cx = states[..., 0, None] + offsets * c[..., None]
    cy = states[..., 1, None] + offsets * s[..., None]
    return np.stack([cx, cy], axis=-1)


def rollout_controls(x0: VehicleState, controls, dt: float, wheelbase: float = WHEELBASE) -> np.ndarray:
    """Forward-integrate the single-track model; returns states (N+1, 4), row 0 = x0."""
    a = np.asarray(controls, dtype=float).reshape(-1, 2)
    if a.shape[0] < 1:
        raise ValueError("need at least one control step")
    out = np.empty((a.shape[0] + 1, 4))
    s = x0
    out[0] = s.as_array()
    for k, (delta, acc) in enumerate(a.tolist()):
        s = step_single_track(s, Action(delta, acc), dt, wheelbase)
        row = s.as_array()
        if not np.all(np.isfinite(row)):
            raise FloatingPointError(f"non-finite state at step {k + 1}")
        out[k + 1] = row
    return out


def rollout_batch(x0: VehicleState, controls: np.ndarray, dt: float, wheelbase: float = WHEELBASE) -> np.ndarray:
    """Vectorized rollout of B control sequences (B, N, 2) -> states (B, N+1, 4)."""
    b, n, _ = controls.shape
    out = np.empty((b, n + 1, 4))
    out[:, 0] = x0.as_array()
    for k in range(n):
        out[:, k + 1] = step_single_track_batch(out[:, k], controls[:, k], dt, wheelbase)
    return out


def pair_clearances(p: OptProblem, traj: np.ndarray) -> list[np.ndarray]:
    """Per agent, the clearance [m] of every ego/agent circle pair, shape (..., N, ce, co)."""
    ego_c = _circle_centers(traj[..., 1:, :], p._ego_circles)          # (..., N, ce, 2)
    r_ego = p._ego_circles[1]
    out = []
    for centers, r_other in zip(p._agent_circles, p._agent_radii):  # centers (N, co, 2)
        diff = ego_c[..., :, None, :] - centers[:, None, :, :]
        out.append(np.sqrt(np.sum(diff * diff, axis=-1)) - r_ego - r_other)
    return out


def clearances(p: OptProblem, traj: np.ndarray) -> np.ndarray:
    """Clearance [m] to every agent, shape (..., N, M): smallest circle-pair clearance.

    The circles cover each footprint, so a non-negative clearance rules out
    overlap.
    """
    pairs = pair_clearances(p, traj)
    if not pairs:
        return np.zeros(traj.shape[:-2] + (p.n_steps, 0))
    return np.stack([c.min(axis=(-1, -2)) for c in pairs], axis=-1)


def _hinges(p: OptProblem, traj: np.ndarray) -> list[np.ndarray]:
    cfg = p.config
    return [cfg.w_col * np.maximum(0.0, cfg.d_safe - c) for c in pair_clearances(p, traj)]


def collision_matrix(p: OptProblem, controls) -> np.ndarray:
    """Collision residual per (step, agent), shape (N, M): root-sum-square of its circle-pair hinges."""
    a = np.asarray(controls, dtype=float).reshape(-1, 2)
    traj = rollout_controls(p.x0, a, p.dt, p.wheelbase)
    cols = [np.sqrt(np.sum(h * h, axis=(-1, -2))) for h in _hinges(p, traj)]
    return np.stack(cols, axis=-1) if cols else np.zeros((p.n_steps, 0))


def _corners(traj: np.ndarray, fp: Footprint) -> np.ndarray:
    """Footprint corners (..., 4, 2) for states (..., 4)."""
    hl, hw = 0.5 * fp.length, 0.5 * fp.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = np.cos(traj[..., 2])[..., None], np.sin(traj[..., 2])[..., None]
    x = traj[..., 0, None] + local[:, 0] * c - local[:, 1] * s
    y = traj[..., 1, None] + local[:, 0] * s + local[:, 1] * c
    return np.stack([x, y], axis=-1)


def residual_blocks(p: OptProblem, traj: np.ndarray, controls: np.ndarray) -> dict[str, np.ndarray]:
    """Weighted residual blocks for a batch: traj (B, N+1, 4), controls (B, N, 2)."""
    cfg = p.config
    b, n = controls.shape[:2]
    track = cfg.w_track * (traj[:, 1:, :2] - p.x_ref[None, 1:, :2])
    rate = np.diff(controls, axis=1) / p.dt
    jerk = cfg.w_jerk * np.stack([cfg.steer_scale * rate[..., 0], rate[..., 1]], axis=-1)
    # one hinge per circle pair keeps every residual smooth where it is active
    hinges = [h.reshape(b, n, -1) for h in _hinges(p, traj)]
    col = np.concatenate(hinges, axis=-1) if hinges else np.zeros((b, n, 0))
    if p.road is not None:
        corners = _corners(traj[:, 1:], p.ego_footprint)
        cx, cy = corners[..., 0], corners[..., 1]
        below = np.maximum(0.0, p.road.lower_y(cx) - cy)
        above = np.maximum(0.0, cy - p.road.upper_y(cx))
        bound = cfg.w_col * np.concatenate([below, above], axis=-1)
    else:
        bound = np.zeros((b, n, 0))
    lo, hi = p.limits.low, p.limits.high
    lim = cfg.w_limit * (controls - np.clip(controls, lo, hi))
    return {"tracking": track.reshape(b, -1), "jerk": jerk.reshape(b, -1),
            "collision": col.reshape(b, -1), "boundary": bound.reshape(b, -1),
            "limits": lim.reshape(b, -1)}


def _step_index(p: OptProblem) -> np.ndarray:
    """State step (1..N) each residual depends on; 0 for control-only residuals."""
    n = p.n_steps
    steps = np.arange(1, n + 1)
    pairs = len(p._ego_circles[0]) * sum(len(c[0]) for c in map(circle_cover, p.other_footprints))
    parts = [np.repeat(steps, 2), np.zeros(2 * (n - 1), dtype=int), np.repeat(steps, pairs)]
    parts.append(np.repeat(steps, 8) if p.road is not None else np.zeros(0, dtype=int))
    parts.append(np.zeros(2 * n, dtype=int))
    return np.concatenate(parts)


def build_residuals(p: OptProblem, controls) -> np.ndarray:
    """Residual vector at the given controls; cost is half its squared norm."""
    a = np.asarray(controls, dtype=float).reshape(-1, 2)
    traj = rollout_controls(p.x0, a, p.dt, p.wheelbase)
    blocks = residual_blocks(p, traj[None], a[None])
    return np.concatenate([blocks[t][0] for t in TERMS])


def cost_breakdown(p: OptProblem, controls) -> dict[str, float]:
    a = np.asarray(controls, dtype=float).reshape(-1, 2)
    traj = rollout_controls(p.x0, a, p.dt, p.wheelbase)
    blocks = residual_blocks(p, traj[None], a[None])
    return {t: 0.5 * float(np.sum(blocks[t] ** 2)) for t in TERMS}


def jacobian(p: OptProblem, controls) -> np.ndarray:
    """Forward-difference Jacobian (m, 2N) of :func:`build_residuals`.

    All perturbed rollouts and the base point share one vectorized pass.
    Entries linking a state residual at step k to controls applied at step
    k or later are structurally zero and set exactly so.
    """
    a = np.asarray(controls, dtype=float).ravel()
    n_var = a.size
    h = p.config.fd_step
    batch = np.repeat(a[None], n_var + 1, axis=0)
    batch[np.arange(1, n_var + 1), np.arange(n_var)] += h
    ctrl = batch.reshape(n_var + 1, -1, 2)
    traj = rollout_batch(p.x0, ctrl, p.dt, p.wheelbase)
    blocks = residual_blocks(p, traj, ctrl)
    r = np.concatenate([blocks[t] for t in TERMS], axis=1)
    J = ((r[1:] - r[0]) / h).T
    steps = _step_index(p)
    control_step = np.arange(n_var) // 2
    J[(steps[:, None] > 0) & (control_step[None, :] >= steps[:, None])] = 0.0
    return J
