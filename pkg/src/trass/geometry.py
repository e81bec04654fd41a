"""Planar rigid-body geometry: SE(2) poses, polygons, hulls and overlap resolution.

Polygons may be non-convex; overlap queries work on their convex parts
(for polyomino blocks these are the individual square cells).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(theta, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])


IDENTITY = Pose2()


def compose(p: Pose2, q: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(p.x + c * q.x - s * q.y, p.y + s * q.x + c * q.y, p.theta + q.theta)


def invert(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta)


def relative_pose(a: Pose2, b: Pose2) -> Pose2:
    """Pose of ``b`` expressed in the frame of ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def ang_dist(a: float, b: float) -> float:
    return abs(math.remainder(a - b, TWO_PI))


def pose_distance(p: Pose2, q: Pose2, ang_weight: float) -> float:
    """Translation distance plus ``ang_weight`` times the angular distance."""
    return math.hypot(p.x - q.x, p.y - q.y) + ang_weight * ang_dist(p.theta, q.theta)


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area; positive for counterclockwise vertices."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Polygon:
    """Simple counterclockwise polygon with an optional convex decomposition.

    ``parts`` lists convex counterclockwise pieces whose union is the
    polygon. When omitted the polygon itself must be convex.
    """

    vertices: np.ndarray
    parts: tuple = field(default=())

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(verts) < 3 or polygon_area(verts) <= 0.0:
            raise ValueError("polygon must have >= 3 counterclockwise vertices")
        object.__setattr__(self, "vertices", verts)
        parts = self.parts or (verts,)
        object.__setattr__(
            self, "parts", tuple(np.asarray(p, dtype=float).reshape(-1, 2) for p in parts)
        )

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict interior test for an (n, 2) array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        for part in self.parts:
            edges = np.roll(part, -1, axis=0) - part
            rel = pts[:, None, :] - part[None, :, :]
            cross = edges[None, :, 0] * rel[:, :, 1] - edges[None, :, 1] * rel[:, :, 0]
            inside |= np.all(cross > 1e-12, axis=1)
        return inside


def transform_points(p: Pose2, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float) @ p.rotation().T + p.translation


def transform_polygon(p: Pose2, poly: Polygon) -> Polygon:
    return Polygon(
        transform_points(p, poly.vertices),
        tuple(transform_points(p, part) for part in poly.parts),
    )


def convex_hull(points: Sequence) -> np.ndarray:
    """Counterclockwise hull vertices by Andrew's monotone chain."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2))))
    if len(pts) < 3:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def convex_hull_area(points: Sequence) -> float:
    hull = convex_hull(points)
    if len(hull) < 3:
        return 0.0
    return polygon_area(hull)


class Overlap(NamedTuple):
    mtv: np.ndarray
    contact: np.ndarray
    depth: float


def polygon_overlap(a: Polygon, b: Polygon) -> Optional[Overlap]:
    """Minimum translation that separates ``b`` from ``a``, or None if disjoint.

    Touching boundaries do not count as overlap.
    """
    from trass import _kernels

    parts_a, counts_a = _kernels.pack_parts(a.parts)
    parts_b, counts_b = _kernels.pack_parts(b.parts)
    hit, mtv_x, mtv_y, cx, cy = _kernels.parts_overlap(parts_a, counts_a, parts_b, counts_b)
    if not hit:
        return None
    mtv = np.array([mtv_x, mtv_y])
    return Overlap(mtv, np.array([cx, cy]), float(np.hypot(mtv_x, mtv_y)))
