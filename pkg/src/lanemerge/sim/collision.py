"""Oriented-rectangle overlap via the separating axis theorem."""

from __future__ import annotations

import math

import numpy as np

from .types import Footprint, VehicleState


def footprint_corners(s: VehicleState, fp: Footprint) -> np.ndarray:
    """Corners (4, 2) of the footprint centered on the state, counter-clockwise."""
    c, sn = math.cos(s.theta), math.sin(s.theta)
    hl, hw = 0.5 * fp.length, 0.5 * fp.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -sn], [sn, c]])
    return local @ rot.T + np.array([s.x, s.y])


def _axes(theta: float) -> tuple[tuple[float, float], tuple[float, float]]:
    c, s = math.cos(theta), math.sin(theta)
    return (c, s), (-s, c)


def check_collision(a_state: VehicleState, a_fp: Footprint,
                    b_state: VehicleState, b_fp: Footprint) -> bool:
    """True iff the two oriented rectangles overlap (touching counts as overlap)."""
    dx, dy = b_state.x - a_state.x, b_state.y - a_state.y
    ra = 0.5 * math.hypot(a_fp.length, a_fp.width)
    rb = 0.5 * math.hypot(b_fp.length, b_fp.width)
    if dx * dx + dy * dy > (ra + rb) ** 2:
        return False
    a_axes = _axes(a_state.theta)
    b_axes = _axes(b_state.theta)
    a_half = (0.5 * a_fp.length, 0.5 * a_fp.width)
    b_half = (0.5 * b_fp.length, 0.5 * b_fp.width)
    for ax, ay in a_axes + b_axes:
        dist = abs(dx * ax + dy * ay)
        proj_a = sum(h * abs(ux * ax + uy * ay) for h, (ux, uy) in zip(a_half, a_axes))
        proj_b = sum(h * abs(ux * ax + uy * ay) for h, (ux, uy) in zip(b_half, b_axes))
        if dist > proj_a + proj_b:
            return False
    return True
