"""Lane centerlines and road boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class LanePath:
    """Polyline centerline with arc-length parameterization.

    Queries beyond either end extrapolate along the first/last segment.
    """

    def __init__(self, centerline, width: float = 3.5):
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("centerline needs at least two 2D points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive centerline points must be distinct")
        if width <= 0:
            raise ValueError("lane width must be positive")
        self.points = pts
        self.width = float(width)
        self._seg = seg
        self._seg_len = seg_len
        self._unit = seg / seg_len[:, None]
        self.s = np.concatenate([[0.0], np.cumsum(seg_len)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def __repr__(self) -> str:
        return f"LanePath(n={len(self.points)}, length={self.length:.1f}, width={self.width})"

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Arc length of the closest point and the signed lateral offset (left positive).

        Points before the start or after the end project onto the extended
        first or last segment, so the arc length may be negative or exceed
        ``length``.
        """
        p = np.array([x, y])
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self._unit)
        t_clamped = np.clip(t, 0.0, self._seg_len)
        # the end segments extend to infinity
        t_clamped[0] = min(t[0], self._seg_len[0])
        t_clamped[-1] = max(t[-1], 0.0) if len(t) > 1 else t[0]
        closest = self.points[:-1] + self._unit * t_clamped[:, None]
        d2 = np.sum((p - closest) ** 2, axis=1)
        i = int(np.argmin(d2))
        u = self._unit[i]
        r = rel[i]
        lateral = u[0] * r[1] - u[1] * r[0]
        return float(self.s[i] + t_clamped[i]), float(lateral)

    def distance(self, x: float, y: float) -> float:
        """Euclidean distance to the centerline polyline (no extrapolation)."""
        p = np.array([x, y])
        rel = p - self.points[:-1]
        t = np.clip(np.einsum("ij,ij->i", rel, self._unit), 0.0, self._seg_len)
        closest = self.points[:-1] + self._unit * t[:, None]
        return float(np.sqrt(np.min(np.sum((p - closest) ** 2, axis=1))))

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """(x, y, heading) at arc length ``s``."""
        if s <= 0.0:
            i = 0
        elif s >= self.s[-1]:
            i = len(self._seg_len) - 1
        else:
            i = int(np.searchsorted(self.s, s, side="right")) - 1
        u = self._unit[i]
        ds = s - self.s[i]
        x = self.points[i, 0] + u[0] * ds
        y = self.points[i, 1] + u[1] * ds
        return float(x), float(y), math.atan2(u[1], u[0])


@dataclass(frozen=True)
class RoadBounds:
    """Drivable corridor given as lower/upper edge polylines y(x), x increasing."""

    lower: tuple[tuple[float, float], ...]
    upper: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for edge in (self.lower, self.upper):
            xs = [p[0] for p in edge]
            if len(xs) < 1 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("road edge x-coordinates must be strictly increasing")
        object.__setattr__(self, "_lo", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "_hi", np.asarray(self.upper, dtype=float))

    def lower_y(self, x):
        return np.interp(x, self._lo[:, 0], self._lo[:, 1])

    def upper_y(self, x):
        return np.interp(x, self._hi[:, 0], self._hi[:, 1])

    def contains(self, xy: np.ndarray) -> bool:
        """True when every given point lies inside the corridor."""
        xy = np.atleast_2d(xy)
        lo = self.lower_y(xy[:, 0])
        hi = self.upper_y(xy[:, 0])
        return bool(np.all((xy[:, 1] >= lo) & (xy[:, 1] <= hi)))
