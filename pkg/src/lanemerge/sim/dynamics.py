"""Vehicle motion models: kinematic single-track (ego), path followers (others)."""

from __future__ import annotations

import math

import numpy as np

from .geometry import LanePath
from .types import Action, IdmParams, VehicleState, normalize_angle

WHEELBASE = 2.7


def _single_track_rhs(theta, v, delta, a, wheelbase):
    # position/heading integrate the non-negative part of v so a stopping
    # vehicle never drifts backwards inside an RK4 stage
    vp = max(v, 0.0)
    return (vp * math.cos(theta), vp * math.sin(theta),
            vp * math.tan(delta) / wheelbase, a)


def step_single_track(s: VehicleState, u: Action, dt: float,
                      wheelbase: float = WHEELBASE) -> VehicleState:
    """Advance the kinematic bicycle model by one RK4 step of length ``dt``.

    State derivative: x' = v cos(theta), y' = v sin(theta),
    theta' = v tan(delta) / L, v' = a. Speed is clamped at zero afterwards.
    """
    x, y, th, v = s.x, s.y, s.theta, s.v
    d, a = u.delta, u.a
    h = 0.5 * dt
    k1 = _single_track_rhs(th, v, d, a, wheelbase)
    k2 = _single_track_rhs(th + h * k1[2], v + h * k1[3], d, a, wheelbase)
    k3 = _single_track_rhs(th + h * k2[2], v + h * k2[3], d, a, wheelbase)
    k4 = _single_track_rhs(th + dt * k3[2], v + dt * k3[3], d, a, wheelbase)
    w = dt / 6.0
    x = x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    y = y + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    th = th + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    v = v + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
    return VehicleState(x, y, normalize_angle(th), max(v, 0.0))


def step_single_track_batch(states: np.ndarray, controls: np.ndarray, dt: float,
                            wheelbase: float = WHEELBASE) -> np.ndarray:
    """Vectorized twin of :func:`step_single_track` over a leading batch axis.

    ``states`` is (B, 4), ``controls`` is (B, 2) as (delta, a). Agrees with the
    scalar version to rounding, not bitwise.
    """
    x, y, th, v = states.T
    d, a = controls.T
    tan_d = np.tan(d) / wheelbase
    h = 0.5 * dt

    def rhs(th_, v_):
        vp = np.maximum(v_, 0.0)
        return vp * np.cos(th_), vp * np.sin(th_), vp * tan_d

    k1 = rhs(th, v)
    k2 = rhs(th + h * k1[2], v + h * a)
    k3 = rhs(th + h * k2[2], v + h * a)
    k4 = rhs(th + dt * k3[2], v + dt * a)
    w = dt / 6.0
    out = np.empty_like(states)
    out[:, 0] = x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    out[:, 1] = y + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    th_new = th + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    out[:, 2] = np.arctan2(np.sin(th_new), np.cos(th_new))
    out[:, 3] = np.maximum(v + w * (a + 2.0 * a + 2.0 * a + a), 0.0)
    return out


def _advance_along_path(path: LanePath, s: VehicleState, distance: float,
                        v_new: float) -> VehicleState:
    arc, _ = path.project(s.x, s.y)
    x, y, heading = path.pose_at(arc + distance)
    return VehicleState(x, y, normalize_angle(heading), v_new)


def step_constant_velocity(s: VehicleState, path: LanePath, dt: float) -> VehicleState:
    """Move ``v * dt`` along the path; heading snaps to the local tangent."""
    if dt == 0.0:
        return s
    return _advance_along_path(path, s, s.v * dt, s.v)


def idm_acceleration(v: float, gap: float | None, dv: float, params: IdmParams) -> float:
    """Intelligent Driver Model acceleration.

    ``gap`` is the bumper-to-bumper distance to the leader (None for free road),
    ``dv`` the closing speed v - v_leader. Non-positive gaps brake at ``b_max``.
    """
    free = 1.0 - (v / params.v0) ** params.exponent
    if gap is None:
        acc = params.a_max * free
    elif gap <= 0.0:
        return -params.b_max
    else:
        s_star = params.s0 + v * params.time_headway + v * dv / (2.0 * math.sqrt(params.a_max * params.b))
        # s* may go negative when the leader pulls away fast; the interaction term stays >= 0
        s_star = max(s_star, 0.0)
        acc = params.a_max * (free - (s_star / gap) ** 2)
    return max(acc, -params.b_max)


def step_idm(s: VehicleState, leader: VehicleState | None, params: IdmParams,
             path: LanePath, dt: float, gap_offset: float = 4.0) -> VehicleState:
    """One IDM step along ``path``.

    ``gap_offset`` is subtracted from the arc-length separation to get the
    bumper-to-bumper gap (half the follower length plus half the leader length).
    """
    if leader is None:
        gap, dv = None, 0.0
    else:
        s_self, _ = path.project(s.x, s.y)
        s_lead, _ = path.project(leader.x, leader.y)
        gap = s_lead - s_self - gap_offset
        dv = s.v - leader.v
    acc = idm_acceleration(s.v, gap, dv, params)
    v_new = s.v + acc * dt
    if v_new < 0.0:
        # stops inside the step
        distance = s.v * s.v / (2.0 * -acc) if acc < 0.0 else 0.0
        v_new = 0.0
    else:
        distance = s.v * dt + 0.5 * acc * dt * dt
    return _advance_along_path(path, s, distance, v_new)
