"""Pole-landmark self-localization: extraction, pseudo-classing and RANSAC map matching."""

from poleloc.errors import (
    CapacityError,
    DegenerateGeometryError,
    InvalidArgumentError,
    NoHypothesisError,
    ParseError,
    PolelocError,
    ValidationError,
)
from poleloc.geometry import IDENTITY, Point2, Pose2, apply, compose, inverse

__all__ = [
    "CapacityError",
    "DegenerateGeometryError",
    "IDENTITY",
    "InvalidArgumentError",
    "NoHypothesisError",
    "ParseError",
    "Point2",
    "PolelocError",
    "Pose2",
    "ValidationError",
    "apply",
    "compose",
    "inverse",
]

__version__ = "0.1.0"
