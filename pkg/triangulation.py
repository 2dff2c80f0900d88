"""
Linear (DLT) triangulation of joints seen by the real camera K[I|0] and the
virtual camera K[DR|Dt].

The solver is written once in torch so the refiner can differentiate through
it; ``triangulate_dlt`` is the plain numpy entry point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from errors import RankDeficientSystem
from geometry import (
    Intrinsics,
    VirtualExtrinsics,
    real_projection_matrix,
    virtual_projection_matrix,
)

logger = logging.getLogger(__name__)

RANK_TOL = 1e-12


@dataclass(frozen=True)
class Joints3D:
    """X[t, j] in scene units with a validity mask."""

    points: np.ndarray
    valid: np.ndarray
    joints: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        valid = np.array(self.valid, dtype=bool)
        if points.shape[:-1] != valid.shape or points.shape[-1] != 3:
            raise ValueError(f"shape mismatch: points {points.shape}, mask {valid.shape}")
        if not np.all(np.isfinite(points[valid])):
            raise ValueError("valid joints must have finite coordinates")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "joints", tuple(str(j) for j in self.joints))

    @property
    def frame_count(self) -> int:
        return self.points.shape[0]


# ============================================
# TORCH SOLVER
# ============================================
def dlt_system(u: torch.Tensor, u_mirror: torch.Tensor, P: torch.Tensor, P_mirror: torch.Tensor) -> torch.Tensor:
    """Row-normalised 4x4 homogeneous system, one per point: (..., 4, 4)."""
    rows = torch.stack(
        [
            u[..., 0:1] * P[2] - P[0],
            u[..., 1:2] * P[2] - P[1],
            u_mirror[..., 0:1] * P_mirror[2] - P_mirror[0],
            u_mirror[..., 1:2] * P_mirror[2] - P_mirror[1],
        ],
        dim=-2,
    )
    return rows / rows.norm(dim=-1, keepdim=True).clamp_min(1e-300)


def solve_dlt(
    u: torch.Tensor, u_mirror: torch.Tensor, P: torch.Tensor, P_mirror: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Differentiable homogeneous least squares.

    Returns:
        points: (..., 3) Euclidean solution
        conditioning: (...,) ratio of the two smallest-but-one singular values,
            sigma_3 / sigma_1; rows whose ratio is below RANK_TOL are rank deficient
    """
    A = dlt_system(u, u_mirror, P, P_mirror)
    _, S, Vh = torch.linalg.svd(A, full_matrices=False)
    v = Vh[..., -1, :]
    points = v[..., :3] / v[..., 3:4]
    conditioning = S[..., 2] / S[..., 0].clamp_min(1e-300)
    return points, conditioning


def projection_tensors(K: Intrinsics, ext: VirtualExtrinsics, dtype=torch.float64) -> Tuple[torch.Tensor, torch.Tensor]:
    P = torch.as_tensor(real_projection_matrix(K), dtype=dtype)
    P_mirror = torch.as_tensor(virtual_projection_matrix(K, ext), dtype=dtype)
    return P, P_mirror


# ============================================
# NUMPY ENTRY POINT
# ============================================
def triangulate_dlt(
    u,
    u_mirror,
    K: Intrinsics,
    ext: VirtualExtrinsics,
    valid: Optional[np.ndarray] = None,
    joints: Tuple[str, ...] = (),
) -> Joints3D:
    """
    Triangulate (..., 2) real/mirror pixel arrays.

    Points behind either camera or with (near) parallel rays are flagged
    invalid; RankDeficientSystem is raised only when nothing is triangulable.
    """
    u = np.asarray(u, dtype=float)
    u_mirror = np.asarray(u_mirror, dtype=float)
    if u.shape != u_mirror.shape or u.shape[-1] != 2:
        raise ValueError(f"pixel arrays must share a (..., 2) shape: {u.shape} vs {u_mirror.shape}")

    requested = np.isfinite(u).all(axis=-1) & np.isfinite(u_mirror).all(axis=-1)
    if valid is not None:
        requested &= np.asarray(valid, dtype=bool)

    P, P_mirror = projection_tensors(K, ext)
    with torch.no_grad():
        points, conditioning = solve_dlt(
            torch.as_tensor(np.where(requested[..., None], u, 0.0)),
            torch.as_tensor(np.where(requested[..., None], u_mirror, 0.0)),
            P,
            P_mirror,
        )
    points = points.numpy()
    well_posed = conditioning.numpy() > RANK_TOL

    if np.any(requested) and not np.any(requested & well_posed):
        raise RankDeficientSystem("every requested point has (near) parallel rays")

    finite = np.isfinite(points).all(axis=-1)
    depth_real = points[..., 2]
    depth_virtual = np.where(finite, ext.apply(np.where(finite[..., None], points, 0.0))[..., 2], -1.0)
    ok = requested & well_posed & finite & (depth_real > 0) & (depth_virtual > 0)

    dropped = int(np.count_nonzero(requested & ~ok))
    if dropped:
        logger.debug(f"Triangulation flagged {dropped} of {int(requested.sum())} points invalid")

    points = np.where(finite[..., None], points, np.nan)
    return Joints3D(points=points, valid=ok, joints=joints)
