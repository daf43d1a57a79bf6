"""Rigid motions (rotation, translation, reflection) and evaluation sweeps.

Convention: coordinates are row vectors, so a transform acts as p @ A + T.
Rotations are right-handed (counterclockwise looking down the positive axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError

AXES = ("X", "Y", "Z")

ROTATION_DEGREES = tuple(float(10 * k) for k in range(37))            # 0, 10, ..., 360
TRANSLATION_VALUES = tuple((k - 18) / 10.0 for k in range(37))        # -1.8, -1.7, ..., 1.8


@dataclass
class RigidTransform:
    """Orthogonal matrix A (rotation or reflection) plus translation T."""

    A: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if np.abs(self.A.T @ self.A - np.eye(3)).max() > 1e-12:
            raise NumericError("transform matrix is not orthogonal to 1e-12")
        det = np.linalg.det(self.A)
        if min(abs(det - 1.0), abs(det + 1.0)) > 1e-12:
            raise NumericError(f"transform determinant {det} is not +-1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


def _axis_index(axis: str) -> int:
    axis = axis.upper()
    if axis not in AXES:
        raise DataError(f"axis must be one of {AXES}, got {axis!r}")
    return AXES.index(axis)


def rotation_about_axis(axis: str, alpha_deg: float) -> RigidTransform:
    """Right-handed rotation by alpha degrees about a coordinate axis."""
    i = _axis_index(axis)
    a = math.radians(alpha_deg)
    c, s = math.cos(a), math.sin(a)
    # row-vector form: p' = p @ A, so A is the transpose of the column-acting matrix
    if i == 0:
        A = np.array([[1, 0, 0], [0, c, s], [0, -s, c]])
    elif i == 1:
        A = np.array([[c, 0, -s], [0, 1, 0], [s, 0, c]])
    else:
        A = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])
    return RigidTransform(A, np.zeros(3))


def translation_along_axis(axis: str, v: float) -> RigidTransform:
    i = _axis_index(axis)
    t = np.zeros(3)
    t[i] = v
    return RigidTransform(np.eye(3), t)


def reflection_across_axis(axis: str) -> RigidTransform:
    """Mirror across the plane normal to the axis (negates that coordinate)."""
    i = _axis_index(axis)
    d = np.ones(3)
    d[i] = -1.0
    return RigidTransform(np.diag(d), np.zeros(3))


def apply(positions: np.ndarray, t: RigidTransform) -> np.ndarray:
    """Transform an (N,3) coordinate array row-wise: positions @ A + T."""
    return np.asarray(positions, dtype=np.float64) @ t.A + t.T


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    """Transform equal to applying t1 first, then t2."""
    return RigidTransform(t1.A @ t2.A, t1.T @ t2.A + t2.T)


@dataclass
class SweepSpec:
    """One family of transforms to scan: kind, axis, and the scanned values."""

    kind: str                      # rotation | translation | reflection
    axis: str
    values: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("rotation", "translation", "reflection"):
            raise DataError(f"unknown sweep kind {self.kind!r}")
        _axis_index(self.axis)
        if self.kind == "rotation":
            if not self.values:
                self.values = ROTATION_DEGREES
            if any(v < 0.0 or v > 360.0 for v in self.values):
                raise DataError("rotation sweep values must lie in [0, 360] degrees")
        elif self.kind == "translation":
            if not self.values:
                self.values = TRANSLATION_VALUES
            if any(v < -1.8 - 1e-12 or v > 1.8 + 1e-12 for v in self.values):
                raise DataError("translation sweep values must lie in [-1.8, 1.8]")
        else:
            self.values = (0.0,)

    @classmethod
    def from_fragment(cls, frag: dict) -> "SweepSpec":
        """Build from a {kind, axis, start, stop, step} config fragment."""
        kind, axis = frag["kind"], frag["axis"]
        if kind == "reflection":
            return cls(kind, axis)
        start, stop, step = float(frag["start"]), float(frag["stop"]), float(frag["step"])
        n = int(round((stop - start) / step)) + 1
        values = tuple(start + k * step for k in range(n))
        return cls(kind, axis, values)

    def to_fragment(self) -> dict:
        if self.kind == "reflection":
            return {"kind": self.kind, "axis": self.axis}
        step = self.values[1] - self.values[0] if len(self.values) > 1 else 0.0
        return {"kind": self.kind, "axis": self.axis, "start": self.values[0],
                "stop": self.values[-1], "step": step}


def sweep(spec: SweepSpec) -> list[RigidTransform]:
    """Materialize every transform of a sweep spec, in value order."""
    if spec.kind == "rotation":
        return [rotation_about_axis(spec.axis, v) for v in spec.values]
    if spec.kind == "translation":
        return [translation_along_axis(spec.axis, v) for v in spec.values]
    return [reflection_across_axis(spec.axis)]


def default_sweeps() -> list[SweepSpec]:
    """The full evaluation grid: 3x37 rotations, 3x37 translations, 3 reflections."""
    specs = [SweepSpec("rotation", ax) for ax in AXES]
    specs += [SweepSpec("translation", ax) for ax in AXES]
    specs += [SweepSpec("reflection", ax) for ax in AXES]
    return specs


def random_transform(rng: np.random.Generator) -> RigidTransform:
    """Random rigid motion: uniform axis/angle rotation, uniform [-1.8, 1.8]^3
    translation, and a reflection with probability 0.5."""
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    angle = math.radians(rng.uniform(0.0, 360.0))
    c, s = math.cos(angle), math.sin(angle)
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    R = np.eye(3) + s * K + (1 - c) * (K @ K)   # column-acting Rodrigues form
    A = R.T                                     # row-vector convention
    if rng.uniform() < 0.5:
        A = np.diag([-1.0, 1.0, 1.0]) @ A
    T = rng.uniform(-1.8, 1.8, size=3)
    return RigidTransform(A, T)
