"""6-D spatial vector algebra for rigid-body kinematics and dynamics.

Motion vectors carry (angular velocity, linear velocity); force vectors
carry (moment, linear force). Coordinate transforms are kept as (rotation,
translation) pairs and applied block-wise, so dense 6x6 Plucker matrices never
appear here.

Convention: ``SpatialTransform(rotation=E, translation=r)`` maps coordinates
from frame A to frame B, where E is the B-from-A rotation applied to free
vectors and r is the position of B's origin expressed in A. This matches the
child-from-parent transforms used by the recursive dynamics algorithms.
"""

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-10


def _vec3(x, name):
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class SpatialVec:
    """A spatial motion or force vector split into 3-D angular/linear parts."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", _vec3(self.angular, "angular"))
        object.__setattr__(self, "linear", _vec3(self.linear, "linear"))

    def as_array(self):
        return np.concatenate([self.angular, self.linear])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.shape != (6,):
            raise ValueError("expected a 6-vector")
        return cls(a[:3], a[3:])

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True, eq=False)
class SpatialTransform:
    """Frame-to-frame coordinate transform as a (rotation, translation) pair."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r @ r.T, np.eye(3), atol=_ORTHO_TOL) \
                or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation",
                           _vec3(self.translation, "translation"))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True, eq=False)
class SpatialInertia:
    """Rigid-body inertia: mass, center of mass, and rotational inertia
    about the center of mass (symmetric positive semidefinite)."""

    mass: float
    com: np.ndarray
    rot_inertia: np.ndarray

    def __post_init__(self):
        m = float(self.mass)
        if not m > 0.0:
            raise ValueError("mass must be positive")
        ic = np.asarray(self.rot_inertia, dtype=float)
        if ic.shape != (3, 3):
            raise ValueError("rot_inertia must be 3x3")
        if not np.allclose(ic, ic.T, atol=1e-12):
            raise ValueError("rot_inertia must be symmetric")
        if np.linalg.eigvalsh(ic).min() < -1e-10:
            raise ValueError("rot_inertia must be positive semidefinite")
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "com", _vec3(self.com, "com"))
        object.__setattr__(self, "rot_inertia", ic)


def cross_motion(v: SpatialVec, m: SpatialVec) -> SpatialVec:
    """Spatial cross product v x m of two motion vectors (motion result)."""
    return SpatialVec(
        np.cross(v.angular, m.angular),
        np.cross(v.angular, m.linear) + np.cross(v.linear, m.angular),
    )


def cross_force(v: SpatialVec, f: SpatialVec) -> SpatialVec:
    """Dual cross product v x* f of a motion with a force (force result).

    Satisfies f·cross_motion(v, m) = -m·cross_force(v, f) for all m, v, f.
    """
    return SpatialVec(
        np.cross(v.angular, f.angular) + np.cross(v.linear, f.linear),
        np.cross(v.angular, f.linear),
    )


def xform_motion(x: SpatialTransform, v: SpatialVec) -> SpatialVec:
    e, r = x.rotation, x.translation
    return SpatialVec(e @ v.angular, e @ (v.linear - np.cross(r, v.angular)))


def xform_force(x: SpatialTransform, f: SpatialVec) -> SpatialVec:
    e, r = x.rotation, x.translation
    return SpatialVec(e @ (f.angular - np.cross(r, f.linear)), e @ f.linear)


def xform_inertia(x: SpatialTransform, ine: SpatialInertia) -> SpatialInertia:
    """Express an inertia in the transform's target frame. The center of
    mass moves with the frame; the rotational inertia (about the center of
    mass) only rotates, so symmetry and definiteness are preserved exactly."""
    e, r = x.rotation, x.translation
    return SpatialInertia(ine.mass, e @ (ine.com - r),
                          e @ ine.rot_inertia @ e.T)


def compose(outer: SpatialTransform, inner: SpatialTransform) -> SpatialTransform:
    """Transform applying `inner` first, then `outer` (C-from-A for
    inner: B-from-A, outer: C-from-B)."""
    e1, r1 = inner.rotation, inner.translation
    e2, r2 = outer.rotation, outer.translation
    return SpatialTransform(e2 @ e1, r1 + e1.T @ r2)


def inverse(x: SpatialTransform) -> SpatialTransform:
    e, r = x.rotation, x.translation
    return SpatialTransform(e.T, -e @ r)
