"""SE(2) rigid transforms and 2D point helpers.

Angles are radians in (-pi, pi]. Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    return t


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    t = np.remainder(np.asarray(theta, dtype=float) + math.pi, TWO_PI) - math.pi
    # remainder lands in [-pi, pi); move the -pi edge to +pi
    return np.where(t <= -math.pi, t + TWO_PI, t)


class Point2(NamedTuple):
    x: float
    y: float

    def distance(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Pose2:
    """Rigid transform p -> R(theta) p + (tx, ty)."""

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        for name in ("tx", "ty", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"Pose2.{name} must be finite, got {v}")
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def translation(self) -> Point2:
        return Point2(self.tx, self.ty)

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized apply over an (N, 2) array."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.tx
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.ty
        return out

    def is_close(self, other: "Pose2", tol: float = 1e-9) -> bool:
        return (
            abs(self.tx - other.tx) <= tol
            and abs(self.ty - other.ty) <= tol
            and abs(normalize_angle(self.theta - other.theta)) <= tol
        )


IDENTITY = Pose2(0.0, 0.0, 0.0)


def apply(pose: Pose2, p) -> Point2:
    x, y = p
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Point2(c * x - s * y + pose.tx, s * x + c * y + pose.ty)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Pose equivalent to applying ``b`` first, then ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        c * b.tx - s * b.ty + a.tx,
        s * b.tx + c * b.ty + a.ty,
        a.theta + b.theta,
    )


def inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.tx + s * a.ty), s * a.tx - c * a.ty, -a.theta)


def as_points(pts) -> np.ndarray:
    """Coerce to a finite (N, 2) float array."""
    arr = np.asarray(pts, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite coordinates")
    return arr
