"""
Joint denoising: alternate L-BFGS descent on the 2D joints (virtual camera
held fixed) with a constrained eight-point re-estimation of the virtual
camera from the refined joints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from body_prior import DTYPE, ObjectiveBreakdown, total_objective
from eight_point import InitialEstimate, estimate_virtual_camera
from errors import DivergedObjective, EmptyCorrespondenceSet
from geometry import Intrinsics, VirtualExtrinsics
from pose_ingest import DEFAULT_MIN_CONFIDENCE, JointTracks, PoseSequencePair
from schemas import AnthropometricTable, RefineConfig
from triangulation import Joints3D

logger = logging.getLogger(__name__)

FD_STEP = 1e-4


@dataclass(frozen=True)
class RefineResult:
    tracks: JointTracks
    extrinsics: VirtualExtrinsics
    estimate: Optional[InitialEstimate]
    joints3d: Joints3D
    objective_trace: Tuple[float, ...]
    outer_iterations: int
    stop_reason: str
    excluded_reprojection_terms: int
    hip_loss_enabled: bool

    @property
    def real(self) -> np.ndarray:
        return self.tracks.real

    @property
    def mirror(self) -> np.ndarray:
        return self.tracks.mirror


class JointObjective:
    """Full calibration objective bound to one sequence; variables are (u, u')."""

    def __init__(
        self,
        tracks: JointTracks,
        K: Intrinsics,
        cfg: RefineConfig,
        table: AnthropometricTable,
        c: float,
        variation: str = "std",
    ):
        self.tracks = tracks
        self.K = K
        self.cfg = cfg
        self.table = table
        self.c = c
        self.variation = variation
        self.mask = torch.as_tensor(tracks.mask)
        # reprojection residuals are anchored to the detections, not the variables
        self.observed, self.observed_mirror = _initial_pixels(tracks)

    def __call__(self, u: torch.Tensor, u_mirror: torch.Tensor, ext: VirtualExtrinsics) -> ObjectiveBreakdown:
        return total_objective(
            u,
            u_mirror,
            self.K,
            ext,
            self.cfg.weights,
            self.table,
            self.c,
            self.tracks.joints,
            self.mask,
            self.variation,
            self.observed,
            self.observed_mirror,
        )

    def value(self, u: torch.Tensor, u_mirror: torch.Tensor, ext: VirtualExtrinsics) -> ObjectiveBreakdown:
        with torch.no_grad():
            result = self(u, u_mirror, ext)
        if not np.isfinite(result.value):
            raise DivergedObjective(f"objective is not finite ({result.value})")
        return result

    def gradient(self, u, u_mirror, ext: VirtualExtrinsics) -> Tuple[np.ndarray, np.ndarray]:
        u = torch.as_tensor(np.asarray(u, dtype=float)).requires_grad_(True)
        u_mirror = torch.as_tensor(np.asarray(u_mirror, dtype=float)).requires_grad_(True)
        total = self(u, u_mirror, ext).total
        if not total.requires_grad:
            return np.zeros(u.shape), np.zeros(u_mirror.shape)
        grad_u, grad_mirror = torch.autograd.grad(total, (u, u_mirror), allow_unused=True)
        zero = torch.zeros_like(u)
        return (
            (grad_u if grad_u is not None else zero).numpy(),
            (grad_mirror if grad_mirror is not None else zero).numpy(),
        )


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, direction: Optional[np.ndarray] = None, step: float = FD_STEP
):
    """
    Central differences for verification builds. With ``direction`` the
    directional derivative is returned, otherwise the full gradient.
    """
    x = np.asarray(x, dtype=float)
    if direction is not None:
        return (f(x + step * direction) - f(x - step * direction)) / (2.0 * step)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        e = e.reshape(x.shape)
        flat[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad


def _initial_pixels(tracks: JointTracks) -> Tuple[torch.Tensor, torch.Tensor]:
    mask = tracks.mask[..., None]
    real = np.where(mask, np.nan_to_num(tracks.real), 0.0)
    mirror = np.where(mask, np.nan_to_num(tracks.mirror), 0.0)
    return torch.tensor(real, dtype=DTYPE), torch.tensor(mirror, dtype=DTYPE)


def _refined_tracks(tracks: JointTracks, u: torch.Tensor, u_mirror: torch.Tensor) -> JointTracks:
    mask = tracks.mask[..., None]
    real = np.where(mask, u.detach().numpy(), tracks.real)
    mirror = np.where(mask, u_mirror.detach().numpy(), tracks.mirror)
    return tracks.with_pixels(real, mirror)


def _joints3d(breakdown: ObjectiveBreakdown, tracks: JointTracks) -> Joints3D:
    points = breakdown.points.detach().numpy()
    valid = breakdown.valid.numpy()
    return Joints3D(np.where(valid[..., None], points, np.nan), valid, tuple(j.value for j in tracks.joints))


def refine_joints(
    pair: PoseSequencePair,
    K: Intrinsics,
    init: VirtualExtrinsics,
    cfg: RefineConfig = RefineConfig(),
    table: Optional[AnthropometricTable] = None,
    geman_mcclure_scale: float = 10.0,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    variation: str = "std",
) -> RefineResult:
    """
    Denoise the observed 2D joints of both views by minimising the body prior
    plus robust reprojection objective, all frames in one problem.
    """
    tracks = pair.to_tracks(min_confidence)
    if not tracks.mask.any():
        raise EmptyCorrespondenceSet("no usable joint pairs to refine")

    objective = JointObjective(tracks, K, cfg, table or AnthropometricTable(), geman_mcclure_scale, variation)
    u, u_mirror = _initial_pixels(tracks)
    ext, estimate = init, None

    current = objective.value(u, u_mirror, ext)
    trace: List[float] = [current.value]
    logger.info(f"Refine start: objective={current.value:.6g} terms={current.terms}")

    if not cfg.weights.active():
        return RefineResult(
            tracks, ext, None, _joints3d(current, tracks), tuple(trace), 0, "no_active_terms",
            current.excluded, current.hip_enabled,
        )

    stop_reason, outer = "max_iterations", 0
    for outer in range(1, cfg.max_outer_iterations + 1):
        saved = (u.clone(), u_mirror.clone())
        u.requires_grad_(True)
        u_mirror.requires_grad_(True)
        optimizer = torch.optim.LBFGS(
            [u, u_mirror],
            lr=cfg.step_length,
            max_iter=cfg.quasi_newton_max_steps_per_outer,
            history_size=cfg.history_size,
            tolerance_grad=cfg.gradient_tol,
            tolerance_change=1e-12,
            line_search_fn="strong_wolfe",
        )
        fixed_ext = ext

        def closure():
            optimizer.zero_grad()
            total = objective(u, u_mirror, fixed_ext).total
            if not torch.isfinite(total):
                raise DivergedObjective(f"objective became non-finite at outer iteration {outer}")
            total.backward()
            return total

        optimizer.step(closure)
        u, u_mirror = u.detach(), u_mirror.detach()

        candidate_ext, candidate_estimate = ext, estimate
        if cfg.update_extrinsics_each_iteration:
            candidate_estimate = estimate_virtual_camera(_refined_tracks(tracks, u, u_mirror).correspondences(), K)
            candidate_ext = candidate_estimate.extrinsics

        candidate = objective.value(u, u_mirror, candidate_ext)
        logger.debug(f"Refine outer {outer}: objective={candidate.value:.6g} terms={candidate.terms}")

        if candidate.value > trace[-1]:
            logger.warning(
                f"Outer iteration {outer} raised the objective ({trace[-1]:.6g} -> {candidate.value:.6g}); rejected"
            )
            u, u_mirror = saved
            stop_reason = "objective_increased"
            outer -= 1
            break

        previous = trace[-1]
        trace.append(candidate.value)
        ext, estimate, current = candidate_ext, candidate_estimate, candidate
        if previous - candidate.value <= cfg.convergence_tol * max(1.0, abs(previous)):
            stop_reason = "converged"
            break

    if not cfg.update_extrinsics_each_iteration:
        # single re-estimation from the refined joints
        estimate = estimate_virtual_camera(_refined_tracks(tracks, u, u_mirror).correspondences(), K)
        ext = estimate.extrinsics
        current = objective.value(u, u_mirror, ext)

    logger.info(f"✅ Refine done after {outer} outer iterations ({stop_reason}), objective={current.value:.6g}")
    return RefineResult(
        tracks=_refined_tracks(tracks, u, u_mirror),
        extrinsics=ext,
        estimate=estimate,
        joints3d=_joints3d(current, tracks),
        objective_trace=tuple(trace),
        outer_iterations=outer,
        stop_reason=stop_reason,
        excluded_reprojection_terms=current.excluded,
        hip_loss_enabled=current.hip_enabled,
    )
