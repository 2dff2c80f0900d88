"""
Modified eight-point algorithm for the reflective fundamental matrix and the
decomposition of the reflective essential matrix into mirror / extrinsics.

Also hosts the unconstrained normalised eight-point comparator (Baseline1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from errors import (
    CheiralityUndecidable,
    DegenerateCloud,
    DegenerateConfiguration,
    RankDeficientSystem,
    SingularIntrinsics,
    TooFewPairs,
    ZeroEssential,
)
from geometry import (
    D,
    Intrinsics,
    MirrorPlane,
    ReflectiveEssential,
    ReflectiveFundamental,
    VirtualExtrinsics,
    canonical_skew,
    extrinsics_from_mirror,
    skew_vector,
)
from triangulation import triangulate_dlt

logger = logging.getLogger(__name__)

MIN_PAIRS = 6
MIN_PAIRS_UNCONSTRAINED = 8
CHEIRALITY_SAMPLE = 50
GRAM_CHUNK = 4096
EIGEN_GAP_TOL = 1e-12


# ============================================
# DOMAIN TYPES
# ============================================
@dataclass(frozen=True)
class CorrespondenceSet:
    """
    Matched pixels: real[i] in the real view, mirror[i] the mirrored joint in
    the same frame. frames / joints keep the origin of each pair.
    """

    real: np.ndarray
    mirror: np.ndarray
    frames: np.ndarray = None
    joints: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        real = np.array(self.real, dtype=float).reshape(-1, 2)
        mirror = np.array(self.mirror, dtype=float).reshape(-1, 2)
        if real.shape != mirror.shape:
            raise ValueError(f"real/mirror size mismatch: {real.shape} vs {mirror.shape}")
        if not (np.all(np.isfinite(real)) and np.all(np.isfinite(mirror))):
            raise ValueError("correspondence coordinates must be finite")
        frames = np.zeros(len(real), dtype=int) if self.frames is None else np.array(self.frames, dtype=int)
        joints = tuple(self.joints) if self.joints else ("",) * len(real)
        if len(frames) != len(real) or len(joints) != len(real):
            raise ValueError("frames / joints must have one entry per pair")
        for array in (real, mirror, frames):
            array.setflags(write=False)
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "mirror", mirror)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "joints", joints)

    def __len__(self) -> int:
        return len(self.real)

    def subset(self, indices) -> "CorrespondenceSet":
        indices = np.asarray(indices, dtype=int)
        return CorrespondenceSet(
            self.real[indices],
            self.mirror[indices],
            self.frames[indices],
            tuple(self.joints[i] for i in indices),
        )

    def homogeneous(self) -> Tuple[np.ndarray, np.ndarray]:
        ones = np.ones((len(self), 1))
        return np.hstack([self.real, ones]), np.hstack([self.mirror, ones])


@dataclass(frozen=True)
class NormalizationTransform:
    matrix: np.ndarray

    @property
    def scale(self) -> float:
        return float(self.matrix[0, 0])

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points * self.scale + self.matrix[:2, 2]


class ConstrainedSolution(NamedTuple):
    """Raw eigen-solution of the normalised 6-parameter problem."""

    f: np.ndarray
    eigenvalues: np.ndarray


class InitialEstimate(NamedTuple):
    fundamental: ReflectiveFundamental
    essential: ReflectiveEssential
    mirror: MirrorPlane
    extrinsics: VirtualExtrinsics


class BaselineEstimate(NamedTuple):
    fundamental: np.ndarray
    extrinsics: VirtualExtrinsics


# ============================================
# NORMALISATION
# ============================================
def normalize_points(points) -> Tuple[np.ndarray, NormalizationTransform]:
    """Hartley normalisation: zero centroid, mean distance sqrt(2)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    centroid = points.mean(axis=0)
    mean_radius = np.linalg.norm(points - centroid, axis=1).mean() if len(points) else 0.0
    if not mean_radius > 0.0:
        raise DegenerateCloud("all points coincide")
    scale = np.sqrt(2.0) / mean_radius
    T = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    transform = NormalizationTransform(T)
    return transform.apply(points), transform


# ============================================
# CONSTRAINED (REFLECTIVE) SOLVER
# ============================================
def constrained_design_matrix(real_n: np.ndarray, mirror_n: np.ndarray) -> np.ndarray:
    """One row [-v'u + u'v, u', v', u, v, 1] per normalised pair."""
    u, v = real_n[:, 0], real_n[:, 1]
    up, vp = mirror_n[:, 0], mirror_n[:, 1]
    return np.column_stack([-vp * u + up * v, up, vp, u, v, np.ones_like(u)])


def accumulate_gram(real_n: np.ndarray, mirror_n: np.ndarray, chunk_size: int = GRAM_CHUNK) -> np.ndarray:
    """A^T A accumulated chunk by chunk with Kahan compensation."""
    gram = np.zeros((6, 6))
    compensation = np.zeros((6, 6))
    for start in range(0, len(real_n), chunk_size):
        A = constrained_design_matrix(real_n[start:start + chunk_size], mirror_n[start:start + chunk_size])
        y = A.T @ A - compensation
        total = gram + y
        compensation = (total - gram) - y
        gram = total
    return gram


def solve_normalized(real_n: np.ndarray, mirror_n: np.ndarray) -> ConstrainedSolution:
    gram = accumulate_gram(real_n, mirror_n)
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    if eigenvalues[1] - eigenvalues[0] <= EIGEN_GAP_TOL * max(eigenvalues[-1], np.finfo(float).tiny):
        raise DegenerateConfiguration("smallest eigenvalue of A^T A is not simple")
    return ConstrainedSolution(eigenvectors[:, 0], eigenvalues)


def normalized_fundamental(f: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5, x6 = f
    return np.array([[0.0, x1, x2], [-x1, 0.0, x3], [x4, x5, x6]])


def solve_constrained_fundamental(corr: CorrespondenceSet) -> ReflectiveFundamental:
    """
    Least-squares reflective fundamental matrix from >= 6 pairs, satisfying
    mirror^T F real = 0.
    """
    if len(corr) < MIN_PAIRS:
        raise TooFewPairs(f"need at least {MIN_PAIRS} pairs, got {len(corr)}")

    real_n, T_real = normalize_points(corr.real)
    mirror_n, T_mirror = normalize_points(corr.mirror)
    solution = solve_normalized(real_n, mirror_n)

    F = T_mirror.matrix.T @ normalized_fundamental(solution.f) @ T_real.matrix
    return ReflectiveFundamental.from_matrix(F)


def essential_from_fundamental(F: ReflectiveFundamental, K: Intrinsics) -> ReflectiveEssential:
    """E = K^T F K, skew-projected, unit norm."""
    K_mat = K.matrix
    if K.fx == 0.0 or K.fy == 0.0:
        raise SingularIntrinsics(f"fx={K.fx}, fy={K.fy}")
    return ReflectiveEssential(canonical_skew(K_mat.T @ F.matrix @ K_mat))


# ============================================
# DECOMPOSITION
# ============================================
def _cheirality_indices(count: int, limit: int = CHEIRALITY_SAMPLE) -> np.ndarray:
    return np.unique(np.linspace(0, count - 1, min(count, limit)).round().astype(int))


def count_in_front(corr: CorrespondenceSet, K: Intrinsics, ext: VirtualExtrinsics) -> int:
    """Pairs (of a fixed subsample) triangulating in front of both cameras."""
    sample = corr.subset(_cheirality_indices(len(corr)))
    try:
        points = triangulate_dlt(sample.real, sample.mirror, K, ext)
    except RankDeficientSystem:
        return 0
    return int(np.count_nonzero(points.valid))


def extract_mirror(
    E: ReflectiveEssential,
    corr: Optional[CorrespondenceSet] = None,
    K: Optional[Intrinsics] = None,
) -> Tuple[MirrorPlane, VirtualExtrinsics]:
    """
    Invert E = 2d[n]x. d is relative to the scale of the given E. The sign of
    n is settled by a cheirality vote when correspondences are supplied,
    otherwise the virtual camera centre is put in front (n_z >= 0).
    """
    w = skew_vector(E.matrix)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise ZeroEssential("essential matrix is zero")
    n = w / norm
    distance = norm / 2.0

    candidates = [MirrorPlane.from_vector(n, distance), MirrorPlane.from_vector(-n, distance)]
    candidates.sort(key=lambda m: -m.normal[2])

    if corr is None or K is None or len(corr) == 0:
        chosen = candidates[0]
    else:
        votes = [count_in_front(corr, K, extrinsics_from_mirror(m)) for m in candidates]
        if max(votes) == 0:
            raise CheiralityUndecidable("no correspondence triangulates in front of both cameras")
        chosen = candidates[int(np.argmax(votes))]
        logger.debug(f"Cheirality vote {votes} -> n={np.round(chosen.n, 6).tolist()}")

    return chosen, extrinsics_from_mirror(chosen)


def estimate_virtual_camera(corr: CorrespondenceSet, K: Intrinsics) -> InitialEstimate:
    """Constrained solve -> essential -> mirror / extrinsics."""
    F = solve_constrained_fundamental(corr)
    E = essential_from_fundamental(F, K)
    mirror, extrinsics = extract_mirror(E, corr, K)
    return InitialEstimate(F, E, mirror, extrinsics)


# ============================================
# UNCONSTRAINED COMPARATOR (BASELINE1)
# ============================================
def solve_unconstrained_fundamental(real, mirror) -> np.ndarray:
    """Normalised 8-point with rank-2 enforcement; mirror^T F real = 0, unit norm."""
    real = np.asarray(real, dtype=float).reshape(-1, 2)
    mirror = np.asarray(mirror, dtype=float).reshape(-1, 2)
    if len(real) < MIN_PAIRS_UNCONSTRAINED:
        raise TooFewPairs(f"need at least {MIN_PAIRS_UNCONSTRAINED} pairs, got {len(real)}")

    real_n, T_real = normalize_points(real)
    mirror_n, T_mirror = normalize_points(mirror)
    ones = np.ones((len(real_n), 1))
    x = np.hstack([real_n, ones])
    xp = np.hstack([mirror_n, ones])
    A = (xp[:, :, None] * x[:, None, :]).reshape(-1, 9)

    _, _, Vt = np.linalg.svd(A)
    F = Vt[-1].reshape(3, 3)
    U, S, Vt = np.linalg.svd(F)
    S[2] = 0.0
    F = U @ np.diag(S) @ Vt

    F = T_mirror.matrix.T @ F @ T_real.matrix
    return F / np.linalg.norm(F)


def flip_homography(K: Intrinsics) -> np.ndarray:
    """K D K^-1: maps mirror-view pixels to a right-handed virtual view."""
    return K.matrix @ D @ K.inverse


def decompose_essential(E: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """The four (R, t) candidates of a standard essential matrix."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def estimate_unconstrained_extrinsics(corr: CorrespondenceSet, K: Intrinsics) -> BaselineEstimate:
    """
    Baseline1: flip the mirror view so it becomes an ordinary camera, fit the
    nine-parameter F, and pick the cheirality-best SVD decomposition.
    """
    H = flip_homography(K)
    mirror_h = np.hstack([corr.mirror, np.ones((len(corr), 1))]) @ H.T
    flipped = mirror_h[:, :2] / mirror_h[:, 2:3]

    F_flipped = solve_unconstrained_fundamental(corr.real, flipped)
    E = K.matrix.T @ F_flipped @ K.matrix

    best, best_votes = None, -1
    for R, t in decompose_essential(E):
        candidate = VirtualExtrinsics(R, t)
        votes = count_in_front(corr, K, candidate)
        if votes > best_votes:
            best, best_votes = candidate, votes
    if best_votes <= 0:
        raise CheiralityUndecidable("no essential decomposition puts the joints in front of both cameras")

    # Express F in the original (unflipped) pixels: mirror^T (H^T F_flipped) real = 0
    F = H.T @ F_flipped
    return BaselineEstimate(F / np.linalg.norm(F), best)


def algebraic_residuals(F, corr: CorrespondenceSet) -> np.ndarray:
    """|mirror^T F real| per pair."""
    x, xp = corr.homogeneous()
    F = F.matrix if isinstance(F, ReflectiveFundamental) else np.asarray(F)
    return np.abs(np.einsum("ni,ij,nj->n", xp, F, x))
