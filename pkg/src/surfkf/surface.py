"""Global reference vectors and the motion surface."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import precision as pr

STANDARD_GRAVITY = 9.81


def _default_g():
    return np.array([0.0, 0.0, STANDARD_GRAVITY])


def _default_b():
    # unit direction, inclined like a mid-latitude field
    return np.array([0.0, 0.6, -0.8])


@dataclass(frozen=True)
class ReferenceVectors:
    """Gravity and magnetic field expressed in the global frame.

    ``g`` is the specific force an accelerometer at rest reads, so it points
    up: ``[0, 0, +9.81]``.
    """

    g: np.ndarray = field(default_factory=_default_g)
    b: np.ndarray = field(default_factory=_default_b)

    def __post_init__(self):
        if not float(pr.norm(pr.to_float(self.g))) > 0 or not float(pr.norm(pr.to_float(self.b))) > 0:
            raise ValueError("reference vectors must be non-zero")

    def at(self, prec: pr.Precision) -> "ReferenceVectors":
        return ReferenceVectors(prec.asarray(self.g), prec.asarray(self.b))


@dataclass(frozen=True)
class SurfaceModel:
    """Plane ``{x : <x - point, n> = 0}`` plus the references used on it."""

    n: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    refs: ReferenceVectors = field(default_factory=ReferenceVectors)

    def __post_init__(self):
        n = pr.to_float(self.n)
        if abs(np.linalg.norm(n) - 1) > 1e-9:
            raise ValueError("surface normal must be a unit vector")
        b = pr.to_float(self.refs.b)
        if abs(np.dot(b / np.linalg.norm(b), n)) >= 1 - 1e-9:
            raise ValueError("magnetic reference must not be collinear with the surface normal")

    def at(self, prec: pr.Precision) -> "SurfaceModel":
        n = prec.asarray(self.n)
        with prec:
            n = n / pr.norm(n)
        return SurfaceModel(n, prec.asarray(self.point), self.refs.at(prec))

    def tangent_basis(self) -> tuple[np.ndarray, np.ndarray]:
        from .rotcore import any_perpendicular, cross

        t1 = any_perpendicular(self.n)
        return t1, cross(self.n, t1)
