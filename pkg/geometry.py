"""
Camera / mirror value types and the closed-form relations between a real
camera and the virtual camera induced by a planar mirror.

Conventions:
    - Everything is expressed in the real camera frame (origin at the optical
      centre, z along the optical axis).
    - The mirror is the plane n . X = d with ||n|| = 1 and d > 0.
    - The virtual camera maps X to D (R X + t); with D = diag(-1, 1, 1) the
      composed map is exactly the reflection about the mirror.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from errors import NotARotation, SingularIntrinsics

logger = logging.getLogger(__name__)

# Right-handed -> left-handed frame change
D = np.diag([-1.0, 1.0, 1.0])
D.setflags(write=False)

ROTATION_TOL = 1e-9
SKEW_TOL_ESSENTIAL = 1e-9
SKEW_TOL_FUNDAMENTAL = 1e-6


# ============================================
# SMALL LINEAR-ALGEBRA HELPERS
# ============================================
def skew(v) -> np.ndarray:
    """[v]x such that skew(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_vector(M) -> np.ndarray:
    """Inverse of skew(): (M32, M13, M21)."""
    M = np.asarray(M, dtype=float)
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def skew_part(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - M.T)


def is_rotation(R, tol: float = ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(3))) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def canonical_skew(M) -> np.ndarray:
    """
    Unit-Frobenius skew matrix with a fixed sign: the largest-magnitude
    component of its skew vector is positive.
    """
    S = skew_part(M)
    norm = np.linalg.norm(S)
    if norm == 0.0:
        return S
    S = S / norm
    w = skew_vector(S)
    if w[np.argmax(np.abs(w))] < 0:
        S = -S
    return S


# ============================================
# INTRINSICS
# ============================================
class Intrinsics(BaseModel):
    """Pinhole camera matrix K, shared by the real and the virtual camera."""

    model_config = ConfigDict(frozen=True)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    skew: float = 0.0

    @classmethod
    def from_image_size(cls, width: int, height: int, focal: float) -> "Intrinsics":
        """Zero skew, square pixels, principal point at the image centre."""
        return cls(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0, skew=0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse(self) -> np.ndarray:
        if self.fx == 0.0 or self.fy == 0.0:
            raise SingularIntrinsics(f"fx={self.fx}, fy={self.fy}")
        return np.linalg.inv(self.matrix)

    @property
    def image_size(self) -> Tuple[float, float]:
        """Nominal image size assuming a centred principal point."""
        return 2.0 * self.cx, 2.0 * self.cy


# ============================================
# MIRROR PLANE
# ============================================
class MirrorPlane(BaseModel):
    """Plane n . X = d in the real camera frame."""

    model_config = ConfigDict(frozen=True)

    normal: Tuple[float, float, float]
    distance: float = Field(gt=0)

    @field_validator("normal")
    @classmethod
    def _unit_normal(cls, value):
        norm = float(np.linalg.norm(value))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"mirror normal must be unit length, got norm {norm}")
        return value

    @classmethod
    def from_vector(cls, normal, distance: float) -> "MirrorPlane":
        """Normalise n and apply the d > 0 sign convention."""
        n = np.asarray(normal, dtype=float).reshape(3)
        n = n / np.linalg.norm(n)
        distance = float(distance)
        if distance < 0:
            n, distance = -n, -distance
        return cls(normal=tuple(float(x) for x in n), distance=distance)

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal, dtype=float)

    def signed_distance(self, points) -> np.ndarray:
        """n . X - d; negative on the camera side of the mirror."""
        return np.asarray(points, dtype=float) @ self.n - self.distance


# ============================================
# EXTRINSICS AND EPIPOLAR MATRICES
# ============================================
@dataclass(frozen=True)
class VirtualExtrinsics:
    """(R, t) of the virtual camera, followed by the fixed reflection D."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation(R):
            raise NotARotation("virtual camera rotation is not a proper rotation")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def reflection(self) -> np.ndarray:
        return D

    @property
    def linear(self) -> np.ndarray:
        """Linear part D R of the composed map (determinant -1)."""
        return D @ self.rotation

    @property
    def offset(self) -> np.ndarray:
        return D @ self.translation

    def apply(self, points) -> np.ndarray:
        """Real-frame points to virtual-camera coordinates."""
        return np.asarray(points, dtype=float) @ self.linear.T + self.offset

    def essential(self) -> np.ndarray:
        """[D t]x D R."""
        return skew(self.offset) @ self.linear

    def normalized(self) -> "VirtualExtrinsics":
        """Same rotation with a unit-norm translation."""
        norm = np.linalg.norm(self.translation)
        if norm == 0.0:
            return self
        return VirtualExtrinsics(self.rotation, self.translation / norm)


@dataclass(frozen=True)
class ReflectiveEssential:
    matrix: np.ndarray

    def __post_init__(self):
        E = np.array(self.matrix, dtype=float).reshape(3, 3)
        scale = np.linalg.norm(E)
        if np.max(np.abs(E + E.T)) > SKEW_TOL_ESSENTIAL * max(scale, 1e-300):
            raise ValueError("reflective essential matrix must be skew-symmetric")
        E.setflags(write=False)
        object.__setattr__(self, "matrix", E)


@dataclass(frozen=True)
class ReflectiveFundamental:
    matrix: np.ndarray

    def __post_init__(self):
        F = np.array(self.matrix, dtype=float).reshape(3, 3)
        if abs(np.linalg.norm(F) - 1.0) > 1e-9:
            raise ValueError("reflective fundamental matrix must have unit norm")
        if np.max(np.abs(F + F.T)) > SKEW_TOL_FUNDAMENTAL:
            raise ValueError("reflective fundamental matrix must be skew-symmetric")
        F.setflags(write=False)
        object.__setattr__(self, "matrix", F)

    @classmethod
    def from_matrix(cls, M) -> "ReflectiveFundamental":
        """Project onto the skew-symmetric matrices and normalise."""
        S = canonical_skew(M)
        if np.linalg.norm(S) == 0.0:
            raise ValueError("fundamental matrix has no skew-symmetric component")
        return cls(S)

    @property
    def epipole(self) -> np.ndarray:
        """Common epipole of both views (right null vector, up to scale)."""
        return skew_vector(self.matrix)


# ============================================
# CLOSED-FORM RELATIONS
# ============================================
def reflect_point(p, mirror: MirrorPlane) -> np.ndarray:
    """p' = p - 2 (n . p - d) n; works on (..., 3) arrays."""
    p = np.asarray(p, dtype=float)
    n = mirror.n
    return p - 2.0 * (p @ n - mirror.distance)[..., None] * n


def essential_from_mirror(mirror: MirrorPlane) -> ReflectiveEssential:
    """E = 2 d [n]x (not normalised; the scale carries d)."""
    return ReflectiveEssential(2.0 * mirror.distance * skew(mirror.n))


def fundamental_from_essential(E: ReflectiveEssential, K: Intrinsics) -> ReflectiveFundamental:
    """F = K^-T E K^-1, re-projected to skew symmetry at unit norm."""
    K_inv = K.inverse
    return ReflectiveFundamental.from_matrix(K_inv.T @ E.matrix @ K_inv)


def extrinsics_from_mirror(mirror: MirrorPlane) -> VirtualExtrinsics:
    """
    Decompose the reflection X -> (I - 2nn^T) X + 2dn as D (R X + t):
    R = D (I - 2nn^T), t = D (2dn).
    """
    n = mirror.n
    householder = np.eye(3) - 2.0 * np.outer(n, n)
    return VirtualExtrinsics(D @ householder, D @ (2.0 * mirror.distance * n))


def real_projection_matrix(K: Intrinsics) -> np.ndarray:
    return K.matrix @ np.hstack([np.eye(3), np.zeros((3, 1))])


def virtual_projection_matrix(K: Intrinsics, ext: VirtualExtrinsics) -> np.ndarray:
    """K [D R | D t]."""
    return K.matrix @ np.hstack([ext.linear, ext.offset[:, None]])


class Projection(NamedTuple):
    pixels: np.ndarray
    in_front: np.ndarray


def project(P, points) -> Projection:
    """
    Pinhole projection of (..., 3) points through a 3x4 matrix. Points with
    non-positive depth are reported in ``in_front`` (their pixels are NaN).
    """
    points = np.asarray(points, dtype=float)
    homogeneous = points @ np.asarray(P)[:, :3].T + np.asarray(P)[:, 3]
    depth = homogeneous[..., 2]
    in_front = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        pixels = homogeneous[..., :2] / depth[..., None]
    pixels = np.where(in_front[..., None], pixels, np.nan)
    return Projection(pixels, in_front)
