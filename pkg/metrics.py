"""
Evaluation metrics: rotation / translation error of the virtual camera and
PA-MPJPE of triangulated joints.
"""

from __future__ import annotations

import logging
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import DegenerateCloud, NotARotation, ZeroTranslation
from geometry import is_rotation
from schemas import MetricSummary, StageMetrics

logger = logging.getLogger(__name__)

METRIC_ROTATION_TOL = 1e-6
METRIC_COLUMNS = ["scene", "stage", "rotation_error_deg", "translation_error", "translation_error_mm"]
SUMMARY_STATISTICS = ("mean", "std", "median")


# ============================================
# EXTRINSICS ERRORS
# ============================================
def rotation_error(R_est, R_gt) -> float:
    """Axis-angle distance between two rotations, in degrees."""
    R_est = np.asarray(R_est, dtype=float)
    R_gt = np.asarray(R_gt, dtype=float)
    for name, R in (("estimate", R_est), ("ground truth", R_gt)):
        if not is_rotation(R, METRIC_ROTATION_TOL):
            raise NotARotation(f"{name} is not a proper rotation")
    cosine = (np.trace(R_gt.T @ R_est) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


def translation_error(t_est, t_gt) -> float:
    """||mu t_est - t_gt|| with mu = ||t_gt|| / ||t_est||."""
    t_est = np.asarray(t_est, dtype=float).reshape(3)
    t_gt = np.asarray(t_gt, dtype=float).reshape(3)
    norm_est = np.linalg.norm(t_est)
    if norm_est == 0.0:
        raise ZeroTranslation("estimated translation is zero")
    mu = np.linalg.norm(t_gt) / norm_est
    return float(np.linalg.norm(mu * t_est - t_gt))


def translation_direction_error(t_est, t_gt) -> float:
    """Distance between unit translation directions (scale-free)."""
    t_gt = np.asarray(t_gt, dtype=float).reshape(3)
    norm_gt = np.linalg.norm(t_gt)
    if norm_gt == 0.0:
        raise ZeroTranslation("ground-truth translation is zero")
    return translation_error(t_est, t_gt / norm_gt)


# ============================================
# PROCRUSTES / PA-MPJPE
# ============================================
def procrustes_align(X_pred, X_gt) -> np.ndarray:
    """
    Similarity transform (rotation, isotropic scale, translation) of X_pred
    onto X_gt in the least-squares sense. Inputs are (J, 3).
    """
    X_pred = np.asarray(X_pred, dtype=float)
    X_gt = np.asarray(X_gt, dtype=float)
    if X_pred.shape != X_gt.shape or X_pred.ndim != 2 or X_pred.shape[1] != 3:
        raise ValueError(f"expected matching (J, 3) clouds, got {X_pred.shape} and {X_gt.shape}")
    if len(X_gt) < 3:
        raise DegenerateCloud(f"need at least 3 joints, got {len(X_gt)}")

    mu_gt = X_gt.mean(axis=0)
    mu_pred = X_pred.mean(axis=0)
    X0 = X_gt - mu_gt
    Y0 = X_pred - mu_pred

    norm_gt = np.linalg.norm(X0)
    norm_pred = np.linalg.norm(Y0)
    if norm_gt == 0.0 or norm_pred == 0.0:
        raise DegenerateCloud("point cloud collapses to a single point")
    if np.linalg.matrix_rank(X0, tol=1e-9 * norm_gt) < 2 or np.linalg.matrix_rank(Y0, tol=1e-9 * norm_pred) < 2:
        raise DegenerateCloud("points are collinear")
    X0 = X0 / norm_gt
    Y0 = Y0 / norm_pred

    # optimum rotation of Y
    H = X0.T @ Y0
    U, s, Vt = np.linalg.svd(H)
    V = Vt.T
    R = V @ U.T

    # avoid improper rotations (reflections)
    if np.linalg.det(R) < 0:
        V[:, -1] *= -1
        s[-1] *= -1
        R = V @ U.T

    scale = s.sum() * norm_gt / norm_pred
    translation = mu_gt - scale * mu_pred @ R
    return scale * X_pred @ R + translation


def pa_mpjpe(X_pred, X_gt, valid=None, unit_scale: float = 1.0) -> float:
    """
    Mean per-joint error after per-frame Procrustes alignment, over valid
    (joint, frame) entries. ``unit_scale`` converts scene units (1000 for
    metres to millimetres).
    """
    X_pred = np.asarray(X_pred, dtype=float)
    X_gt = np.asarray(X_gt, dtype=float)
    if X_pred.ndim == 2:
        X_pred, X_gt = X_pred[None], X_gt[None]
        valid = None if valid is None else np.asarray(valid)[None]
    if X_pred.shape != X_gt.shape:
        raise ValueError(f"shape mismatch {X_pred.shape} vs {X_gt.shape}")

    mask = np.isfinite(X_pred).all(axis=-1) & np.isfinite(X_gt).all(axis=-1)
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)

    errors: List[np.ndarray] = []
    for t in range(X_pred.shape[0]):
        frame = mask[t]
        if frame.sum() < 3:
            continue
        aligned = procrustes_align(X_pred[t, frame], X_gt[t, frame])
        errors.append(np.linalg.norm(aligned - X_gt[t, frame], axis=-1))
    if not errors:
        raise DegenerateCloud("no frame has 3 valid joints")
    return float(np.mean(np.concatenate(errors)) * unit_scale)


# ============================================
# AGGREGATION
# ============================================
def metrics_frame(rows: Iterable[StageMetrics]) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=METRIC_COLUMNS)
    return frame.sort_values(["stage", "scene"], kind="mergesort").reset_index(drop=True)


def summarize(rows: Sequence[StageMetrics]) -> List[MetricSummary]:
    """Mean, population std and median per stage."""
    frame = metrics_frame(rows)
    summaries: List[MetricSummary] = []
    for stage, group in frame.groupby("stage", sort=True):
        for statistic in SUMMARY_STATISTICS:
            values = {}
            for column in ("rotation_error_deg", "translation_error", "translation_error_mm"):
                series = group[column].dropna()
                if series.empty:
                    values[column] = None
                elif statistic == "std":
                    values[column] = float(series.std(ddof=0))
                else:
                    values[column] = float(getattr(series, statistic)())
            summaries.append(MetricSummary(stage=stage, statistic=statistic, **values))
    return summaries


def metrics_table(rows: Sequence[StageMetrics]) -> pd.DataFrame:
    """Per-scene rows followed by one summary row per (stage, statistic)."""
    frame = metrics_frame(rows)
    summary = pd.DataFrame(
        [{"scene": s.statistic, **s.model_dump(exclude={"statistic"})} for s in summarize(rows)],
        columns=METRIC_COLUMNS,
    )
    return pd.concat([frame, summary], ignore_index=True)


def stage_metrics(
    scene: str,
    stage: str,
    R_est,
    t_est,
    R_gt,
    t_gt,
    units: Optional[str] = None,
) -> StageMetrics:
    error_t = translation_error(t_est, t_gt)
    return StageMetrics(
        scene=scene,
        stage=stage,
        rotation_error_deg=rotation_error(R_est, R_gt),
        translation_error=error_t,
        translation_error_mm=error_t * 1000.0 if units == "m" else None,
    )
