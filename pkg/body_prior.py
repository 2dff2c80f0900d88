"""
Human body prior: bone model and the loss terms used to denoise 2D joints.

All losses are torch functions so the refiner can differentiate through
them; they accept numpy arrays as well. Missing (joint, frame) entries are
described by boolean masks and simply do not contribute.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch

from errors import MissingJoint, TooFewFrames, ZeroFemur, ZeroMeanLength
from geometry import Intrinsics, VirtualExtrinsics
from pose_ingest import JointId
from schemas import AnthropometricTable, LossWeights
from triangulation import RANK_TOL, projection_tensors, solve_dlt

logger = logging.getLogger(__name__)

DTYPE = torch.float64
SQRT_EPS = 1e-30


def _tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value if value.dtype == DTYPE else value.to(DTYPE)
    return torch.as_tensor(np.asarray(value, dtype=float), dtype=DTYPE)


def _mask(mask, shape) -> torch.Tensor:
    if mask is None:
        return torch.ones(shape, dtype=torch.bool)
    return torch.as_tensor(np.asarray(mask, dtype=bool)) if not isinstance(mask, torch.Tensor) else mask.bool()


def safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    """sqrt with a zero (not NaN) gradient at 0."""
    return torch.where(x > SQRT_EPS, torch.sqrt(x.clamp_min(SQRT_EPS)), torch.zeros_like(x))


def safe_norm(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return safe_sqrt((x * x).sum(dim=dim))


# ============================================
# BONES
# ============================================
@dataclass(frozen=True)
class Bone:
    name: str
    kind: str
    start: JointId
    end: JointId


BONES: Tuple[Bone, ...] = (
    Bone("RFemur", "femur", JointId.RHip, JointId.RKnee),
    Bone("LFemur", "femur", JointId.LHip, JointId.LKnee),
    Bone("RHumerus", "humerus", JointId.RShoulder, JointId.RElbow),
    Bone("LHumerus", "humerus", JointId.LShoulder, JointId.LElbow),
    Bone("RUlna", "ulna", JointId.RElbow, JointId.RWrist),
    Bone("LUlna", "ulna", JointId.LElbow, JointId.LWrist),
    Bone("RTibia", "tibia", JointId.RKnee, JointId.RAnkle),
    Bone("LTibia", "tibia", JointId.LKnee, JointId.LAnkle),
    Bone("RScapular", "scapular", JointId.Neck, JointId.RShoulder),
    Bone("LScapular", "scapular", JointId.Neck, JointId.LShoulder),
    Bone("RHip", "hip", JointId.MidHip, JointId.RHip),
    Bone("LHip", "hip", JointId.MidHip, JointId.LHip),
)


@dataclass(frozen=True)
class BoneSet:
    bones: Tuple[Bone, ...] = BONES
    _by_name: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_name = {bone.name: i for i, bone in enumerate(self.bones)}
        for bone in self.bones:
            if self._counterpart_name(bone) not in by_name:
                raise ValueError(f"bone set is not symmetric: {bone.name} has no counterpart")
        object.__setattr__(self, "_by_name", by_name)

    @staticmethod
    def _counterpart_name(bone: Bone) -> str:
        side = {"R": "L", "L": "R"}[bone.name[0]]
        return side + bone.name[1:]

    def __len__(self) -> int:
        return len(self.bones)

    def __iter__(self):
        return iter(self.bones)

    def index(self, name: str) -> int:
        return self._by_name[name]

    def mirror(self, bone: Bone) -> Bone:
        """m(k): the left/right counterpart of a bone."""
        return self.bones[self._by_name[self._counterpart_name(bone)]]

    def mirror_indices(self) -> torch.Tensor:
        return torch.tensor([self._by_name[self._counterpart_name(b)] for b in self.bones], dtype=torch.long)

    def femur_indices(self) -> Tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bones) if b.kind == "femur")

    @classmethod
    def for_joints(cls, joints: Sequence[JointId]) -> "BoneSet":
        """Bones whose endpoints exist in a layout; dropped in symmetric pairs."""
        present = set(JointId(j) for j in joints)
        kept = [b for b in BONES if b.start in present and b.end in present]
        names = {b.name for b in kept}
        kept = [b for b in kept if cls._counterpart_name(b) in names]
        return cls(tuple(kept))


def bone_lengths(
    X,
    joints: Sequence[JointId],
    bones: Optional[BoneSet] = None,
    mask=None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Bone lengths l[k, t] from X of shape (T, J, 3), plus the (K, T) mask of
    frames where both endpoints are present.
    """
    X = _tensor(X)
    bones = bones if bones is not None else BoneSet()
    index = {JointId(j): i for i, j in enumerate(joints)}
    valid = _mask(mask, X.shape[:2])

    starts, ends = [], []
    for bone in bones:
        if bone.start not in index or bone.end not in index:
            raise MissingJoint(f"{bone.name} needs {bone.start.value} and {bone.end.value}")
        starts.append(index[bone.start])
        ends.append(index[bone.end])

    starts_t, ends_t = torch.tensor(starts, dtype=torch.long), torch.tensor(ends, dtype=torch.long)
    lengths = safe_norm(X[:, ends_t] - X[:, starts_t]).T
    present = (valid[:, starts_t] & valid[:, ends_t]).T
    return torch.where(present, lengths, torch.zeros_like(lengths)), present


# ============================================
# LOSS TERMS
# ============================================
def loss_var(lengths, valid=None, variation: str = "std") -> torch.Tensor:
    """Sum over bones of (variation over time) / (mean length)."""
    lengths = _tensor(lengths)
    if lengths.ndim != 2 or lengths.shape[1] < 2:
        raise TooFewFrames("bone length variation needs at least 2 frames")
    valid = _mask(valid, lengths.shape)
    weight = valid.to(DTYPE)
    count = weight.sum(dim=1)
    used = count >= 2
    if not torch.any(used):
        return lengths.new_zeros(())

    mean = (lengths * weight).sum(dim=1) / count.clamp_min(1.0)
    if torch.any(used & (mean <= 0)):
        raise ZeroMeanLength("a bone has zero mean length")

    if variation == "std":
        spread = safe_sqrt((((lengths - mean[:, None]) ** 2) * weight).sum(dim=1) / count.clamp_min(1.0))
    elif variation == "range":
        high = torch.where(valid, lengths, torch.full_like(lengths, -np.inf)).amax(dim=1)
        low = torch.where(valid, lengths, torch.full_like(lengths, np.inf)).amin(dim=1)
        spread = torch.where(used, high - low, torch.zeros_like(high))
    else:
        raise ValueError(f"unknown variation '{variation}'")

    ratio = torch.where(used, spread / torch.where(used, mean, torch.ones_like(mean)), torch.zeros_like(mean))
    return ratio.sum()


def loss_sym(lengths, bones: Optional[BoneSet] = None, valid=None) -> torch.Tensor:
    """Sum over frames and bones of |l_k - l_m(k)|; each pair counts twice."""
    lengths = _tensor(lengths)
    bones = bones if bones is not None else BoneSet()
    valid = _mask(valid, lengths.shape)
    partner = bones.mirror_indices()
    both = valid & valid[partner]
    diff = safe_sqrt((lengths - lengths[partner]) ** 2)
    return torch.where(both, diff, torch.zeros_like(diff)).sum()


def loss_anth(lengths, bones: Optional[BoneSet] = None, table: Optional[AnthropometricTable] = None, valid=None) -> torch.Tensor:
    """Squared deviation of femur-normalised lengths from the table ratios."""
    lengths = _tensor(lengths)
    bones = bones if bones is not None else BoneSet()
    table = table or AnthropometricTable()
    valid = _mask(valid, lengths.shape)

    femurs = bones.femur_indices()
    if not femurs:
        raise MissingJoint("anthropometric loss needs the femurs")
    femur = torch.stack(
        [torch.where(valid[i], lengths[i], torch.zeros_like(lengths[i])) for i in femurs]
    ).amax(dim=0)
    frame_ok = torch.stack([valid[i] for i in femurs]).any(dim=0)
    if torch.any(frame_ok & (femur <= 0)):
        raise ZeroFemur("femur length is zero")

    sigma = torch.tensor([getattr(table, b.kind) for b in bones], dtype=DTYPE)
    usable = valid & frame_ok[None, :]
    ratio = lengths / torch.where(frame_ok, femur, torch.ones_like(femur))[None, :]
    residual = (ratio - sigma[:, None]) ** 2
    return torch.where(usable, residual, torch.zeros_like(residual)).sum()


def loss_hip(X, joints: Sequence[JointId], mask=None) -> Tuple[torch.Tensor, bool]:
    """
    Sum over frames of |v_ml x v_mr|. Returns (value, enabled); disabled
    (value 0) when MidHip is not part of the layout.
    """
    X = _tensor(X)
    index = {JointId(j): i for i, j in enumerate(joints)}
    if not {JointId.MidHip, JointId.LHip, JointId.RHip} <= set(index):
        return X.new_zeros(()), False
    valid = _mask(mask, X.shape[:2])

    mid, left, right = index[JointId.MidHip], index[JointId.LHip], index[JointId.RHip]
    v_ml = X[:, left] - X[:, mid]
    v_mr = X[:, right] - X[:, mid]
    area = safe_norm(torch.linalg.cross(v_ml, v_mr))
    frames = valid[:, mid] & valid[:, left] & valid[:, right]
    return torch.where(frames, area, torch.zeros_like(area)).sum(), True


def loss_smooth(X, mask=None) -> torch.Tensor:
    """Squared central second difference over interior frames."""
    X = _tensor(X)
    if X.shape[0] < 3:
        raise TooFewFrames("smoothness needs at least 3 frames")
    valid = _mask(mask, X.shape[:2])
    accel = X[2:] - 2.0 * X[1:-1] + X[:-2]
    ok = valid[2:] & valid[1:-1] & valid[:-2]
    sq = (accel * accel).sum(dim=-1)
    return torch.where(ok, sq, torch.zeros_like(sq)).sum()


def geman_mcclure(r, c: float):
    """rho(r) = r^2 / (r^2 + c^2)."""
    if not c > 0:
        raise ValueError("Geman-McClure scale must be positive")
    r = _tensor(r)
    return r * r / (r * r + c * c)


def project_tensor(P: torch.Tensor, X: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    homogeneous = X @ P[:, :3].T + P[:, 3]
    depth = homogeneous[..., 2]
    safe_depth = torch.where(depth > 0, depth, torch.ones_like(depth))
    return homogeneous[..., :2] / safe_depth[..., None], depth


def loss_repro(
    u,
    u_mirror,
    X,
    K: Intrinsics,
    ext: VirtualExtrinsics,
    c: float,
    mask=None,
) -> Tuple[torch.Tensor, int]:
    """
    Robust reprojection term. Returns (value, excluded) where excluded counts
    the terms dropped because X lies behind one of the cameras.
    """
    u, u_mirror, X = _tensor(u), _tensor(u_mirror), _tensor(X)
    valid = _mask(mask, X.shape[:-1])
    P, P_mirror = projection_tensors(K, ext)

    pixels, depth = project_tensor(P, X)
    pixels_mirror, depth_mirror = project_tensor(P_mirror, X)
    in_front = (depth > 0) & (depth_mirror > 0)
    excluded = int(torch.count_nonzero(valid & ~in_front))

    residual = safe_norm(pixels - u) + safe_norm(pixels_mirror - u_mirror)
    rho = geman_mcclure(residual, c)
    keep = valid & in_front
    return torch.where(keep, rho, torch.zeros_like(rho)).sum(), excluded


# ============================================
# TOTAL OBJECTIVE
# ============================================
@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: torch.Tensor
    terms: Dict[str, float]
    excluded: int
    hip_enabled: bool
    points: torch.Tensor
    valid: torch.Tensor

    @property
    def value(self) -> float:
        return float(self.total.detach())


def triangulate_tensor(u, u_mirror, K: Intrinsics, ext: VirtualExtrinsics, mask=None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Differentiable triangulation; returns X (T, J, 3) and the usable mask."""
    u, u_mirror = _tensor(u), _tensor(u_mirror)
    requested = _mask(mask, u.shape[:-1])
    P, P_mirror = projection_tensors(K, ext)
    zeros = torch.zeros_like(u)
    X, conditioning = solve_dlt(
        torch.where(requested[..., None], u, zeros),
        torch.where(requested[..., None], u_mirror, zeros),
        P,
        P_mirror,
    )
    with torch.no_grad():
        finite = torch.isfinite(X).all(dim=-1)
        usable = requested & finite & (conditioning > RANK_TOL)
    X = torch.where(usable[..., None], X, torch.zeros_like(X))
    return X, usable


def total_objective(
    u,
    u_mirror,
    K: Intrinsics,
    ext: VirtualExtrinsics,
    weights: LossWeights,
    table: AnthropometricTable,
    c: float,
    joints: Sequence[JointId],
    mask=None,
    variation: str = "std",
    observed=None,
    observed_mirror=None,
) -> ObjectiveBreakdown:
    """
    Weighted sum of the six terms on joints triangulated from (u, u').
    A term whose weight is 0 is not evaluated.

    The reprojection term is measured against ``observed`` / ``observed_mirror``,
    the detected pixels the variables started from. Without them the current
    (u, u') are used as the observation.
    """
    u, u_mirror = _tensor(u), _tensor(u_mirror)
    observed = u.detach() if observed is None else _tensor(observed)
    observed_mirror = u_mirror.detach() if observed_mirror is None else _tensor(observed_mirror)
    X, usable = triangulate_tensor(u, u_mirror, K, ext, mask)

    P, P_mirror = projection_tensors(K, ext)
    with torch.no_grad():
        in_front = (project_tensor(P, X)[1] > 0) & (project_tensor(P_mirror, X)[1] > 0)
    body_mask = usable & in_front

    total = u.new_zeros(())
    terms: Dict[str, float] = {}
    excluded, hip_enabled = 0, False

    lengths = valid = None
    bones = BoneSet.for_joints(joints)
    if len(bones) and (weights.var > 0 or weights.sym > 0 or weights.anth > 0):
        lengths, valid = bone_lengths(X, joints, bones, body_mask)

    def add(name: str, weight: float, value: torch.Tensor):
        nonlocal total
        terms[name] = float(value.detach())
        total = total + weight * value

    if weights.var > 0 and lengths is not None:
        add("var", weights.var, loss_var(lengths, valid, variation))
    if weights.sym > 0 and lengths is not None:
        add("sym", weights.sym, loss_sym(lengths, bones, valid))
    if weights.anth > 0 and lengths is not None and bones.femur_indices():
        add("anth", weights.anth, loss_anth(lengths, bones, table, valid))
    if weights.hip > 0:
        value, hip_enabled = loss_hip(X, joints, body_mask)
        if hip_enabled:
            add("hip", weights.hip, value)
    if weights.smooth > 0 and X.shape[0] >= 3:
        add("smooth", weights.smooth, loss_smooth(X, body_mask))
    if weights.repro > 0:
        value, excluded = loss_repro(observed, observed_mirror, X, K, ext, c, usable)
        add("repro", weights.repro, value)

    return ObjectiveBreakdown(total, terms, excluded, hip_enabled, X, body_mask)
