"""2D geometry kernel: polyline resampling, oriented rectangles, rigid frames.

All angles are radians wrapped to (-pi, pi], all lengths are meters.
Functions accept either a single point of shape (2,) or a batch of shape
(n, 2) where noted; everything is pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Segment",
    "OrientedRect",
    "Frame2D",
    "wrap_angle",
    "resample_polyline",
    "polyline_arc_length",
    "expand_segment",
    "rects_intersect",
    "rect_contains_point",
    "point_rect_distance",
    "point_polyline_distance",
    "to_frame",
    "from_frame",
    "rotation_matrix",
]

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or ndarray) to (-pi, pi]."""
    r = np.mod(np.asarray(theta, dtype=float) + math.pi, _TWO_PI)
    r = np.where(r == 0.0, _TWO_PI, r) - math.pi
    if np.ndim(theta) == 0:
        return float(r)
    return r


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(eq=False)
class Segment:
    """Directed straight piece of a lane centerline, p1 -> p2."""

    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=float)
        self.p2 = np.asarray(self.p2, dtype=float)
        if np.array_equal(self.p1, self.p2):
            raise ValueError("segment endpoints coincide")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)

    @property
    def vector(self) -> np.ndarray:
        return self.p2 - self.p1

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.p2 - self.p1)))

    @property
    def heading(self) -> float:
        d = self.p2 - self.p1
        return math.atan2(d[1], d[0])


@dataclass(eq=False)
class OrientedRect:
    """Rectangle given by center, heading and half extents."""

    center: np.ndarray
    heading: float
    half_length: float
    half_width: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("rectangle half extents must be positive")

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), counter-clockwise."""
        local = np.array(
            [
                [self.half_length, self.half_width],
                [-self.half_length, self.half_width],
                [-self.half_length, -self.half_width],
                [self.half_length, -self.half_width],
            ]
        )
        return local @ rotation_matrix(self.heading).T + self.center

    def axes(self) -> np.ndarray:
        """Unit long/lateral axes as rows, shape (2, 2)."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    @property
    def area(self) -> float:
        return 4.0 * self.half_length * self.half_width


@dataclass(eq=False)
class Frame2D:
    """Rigid 2D reference frame (origin plus heading)."""

    origin: np.ndarray
    heading: float = 0.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.heading = wrap_angle(self.heading)


def polyline_arc_length(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("polyline must have shape (m, 2) with m >= 2")
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def resample_polyline(points, target_len: float) -> list[Segment]:
    """Cut a polyline into segments of equal arc length close to target_len.

    The segment count is max(1, round(arc_length / target_len)) with .5
    rounding up; endpoints lie exactly on the polyline and concatenation
    reproduces its path.
    """
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("polyline must have shape (m, 2) with m >= 2")
    step_len = np.hypot(*np.diff(pts, axis=0).T)
    total = float(step_len.sum())
    if total <= 0.0:
        raise ValueError("degenerate polyline: zero arc length")
    n = max(1, math.floor(total / target_len + 0.5))
    cum = np.concatenate([[0.0], np.cumsum(step_len)])
    stations = np.linspace(0.0, total, n + 1)
    xs = np.interp(stations, cum, pts[:, 0])
    ys = np.interp(stations, cum, pts[:, 1])
    knots = np.column_stack([xs, ys])
    return [Segment(knots[i], knots[i + 1]) for i in range(n)]


def expand_segment(seg: Segment, lane_width: float) -> OrientedRect:
    """Expand a lane segment to its occupancy rectangle."""
    if lane_width <= 0:
        raise ValueError("lane_width must be positive")
    return OrientedRect(
        center=seg.midpoint,
        heading=seg.heading,
        half_length=0.5 * seg.length,
        half_width=0.5 * lane_width,
    )


def _projected_interval(corners: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    d = corners @ axis
    return float(d.min()), float(d.max())


def rects_intersect(a: OrientedRect, b: OrientedRect) -> bool:
    """Closed-rectangle overlap test (separating axis, 4 candidate axes).

    Boundary contact counts as intersection.
    """
    ca, cb = a.corners(), b.corners()
    for axis in (*a.axes(), *b.axes()):
        lo_a, hi_a = _projected_interval(ca, axis)
        lo_b, hi_b = _projected_interval(cb, axis)
        if hi_a < lo_b or hi_b < lo_a:
            return False
    return True


def rect_contains_point(rect: OrientedRect, p) -> bool:
    """Closed membership test."""
    q = to_frame(np.asarray(p, dtype=float), Frame2D(rect.center, rect.heading))
    return bool(abs(q[0]) <= rect.half_length and abs(q[1]) <= rect.half_width)


def point_rect_distance(p, rect: OrientedRect) -> float:
    """Euclidean distance from a point to a closed rectangle (0 inside)."""
    q = to_frame(np.asarray(p, dtype=float), Frame2D(rect.center, rect.heading))
    dx = max(abs(q[0]) - rect.half_length, 0.0)
    dy = max(abs(q[1]) - rect.half_width, 0.0)
    return math.hypot(dx, dy)


def point_polyline_distance(p, points: np.ndarray) -> float:
    """Distance from a point to a polyline (minimum over its segments)."""
    pts = np.asarray(points, dtype=float)
    p = np.asarray(p, dtype=float)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ab_sq = (ab * ab).sum(axis=1)
    ab_sq = np.where(ab_sq == 0.0, 1.0, ab_sq)
    t = np.clip(((p - a) * ab).sum(axis=1) / ab_sq, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.hypot(*(closest - p).T).min())


def to_frame(p, f: Frame2D):
    """World -> frame coordinates: rotate by -heading after removing origin.

    Accepts a single (2,) point or an (n, 2) batch.
    """
    q = np.asarray(p, dtype=float) - f.origin
    return q @ rotation_matrix(-f.heading).T


def from_frame(p, f: Frame2D):
    """Frame -> world coordinates; exact inverse of :func:`to_frame`."""
    q = np.asarray(p, dtype=float)
    return q @ rotation_matrix(f.heading).T + f.origin
