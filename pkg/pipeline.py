"""
End-to-end calibration pipeline shared by the CLI and the HTTP API:
ingest -> initial estimate -> refinement -> RANSAC -> final estimate, plus
evaluation against ground truth and triangulation with a chosen stage.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from config import APP_VERSION, PipelineConfig
from eight_point import (
    CorrespondenceSet,
    essential_from_fundamental,
    estimate_unconstrained_extrinsics,
    estimate_virtual_camera,
    extract_mirror,
)
from errors import CalibrationError, ConfigError, MalformedDocument, ScaleMismatch
from geometry import Intrinsics, MirrorPlane, VirtualExtrinsics
from metrics import pa_mpjpe, rotation_error, stage_metrics, summarize, translation_direction_error, translation_error
from pose_ingest import (
    PoseSequencePair,
    assign_real_mirror_tracks,
    build_correspondences,
    load_openpose_directory,
    load_sequence,
)
from ransac import RansacResult, ransac_fundamental
from refiner import RefineResult, refine_joints
from schemas import (
    CalibrationReport,
    EvaluationResult,
    GroundTruthDocument,
    InlierStats,
    IntrinsicsDocument,
    MirrorDocument,
    RefineStats,
    StageErrors,
    StageMetrics,
    StageResult,
    TriangulationResult,
)
from triangulation import triangulate_dlt

logger = logging.getLogger(__name__)

STAGE_ORDER = ("baseline1", "init", "baseline2", "refine", "full")
TRIANGULATION_SOURCES = STAGE_ORDER


# ============================================
# STAGE ATTRIBUTION
# ============================================
@contextmanager
def stage(name: str) -> Iterator[None]:
    """Attach the stage name to any calibration error raised inside."""
    logger.info(f"Stage {name}: start")
    try:
        yield
    except CalibrationError as e:
        if e.stage is None:
            e.stage = name
        logger.error(f"❌ Stage {name} failed: {e}")
        raise
    logger.info(f"✅ Stage {name}: done")


# ============================================
# INPUT LOADING
# ============================================
def load_intrinsics(path: Union[str, Path]) -> Intrinsics:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"intrinsics file not found: {path}")
    try:
        return IntrinsicsDocument.model_validate_json(path.read_text()).to_intrinsics()
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid intrinsics file {path}: {e}") from e


def load_ground_truth(path: Union[str, Path]) -> GroundTruthDocument:
    try:
        return GroundTruthDocument.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError, ValueError) as e:
        raise MalformedDocument(f"cannot read ground truth {path}: {e}") from e


def load_report(path: Union[str, Path]) -> CalibrationReport:
    try:
        return CalibrationReport.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError, ValueError) as e:
        raise MalformedDocument(f"cannot read report {path}: {e}") from e


def load_poses(path: Union[str, Path], K: Intrinsics, config: PipelineConfig) -> PoseSequencePair:
    """A generic sequence document, or an OpenPose directory (tracks get assigned)."""
    path = Path(path)
    with stage("ingest"):
        if path.is_dir():
            detections = load_openpose_directory(path)
            return assign_real_mirror_tracks(
                detections, K, config.min_confidence, subsample=config.assignment_subsample
            )
        if not path.is_file():
            raise MalformedDocument(f"pose input not found: {path}")
        return load_sequence(path)


# ============================================
# CALIBRATION
# ============================================
@dataclass(frozen=True)
class StageEstimate:
    fundamental: np.ndarray
    extrinsics: VirtualExtrinsics
    mirror: Optional[MirrorPlane] = None


@dataclass(frozen=True)
class CalibrationRun:
    report: CalibrationReport
    estimates: Dict[str, StageEstimate]
    refine: Optional[RefineResult]
    ransac: Optional[RansacResult]


def _stage_errors(ext: VirtualExtrinsics, truth: Optional[GroundTruthDocument]) -> Optional[StageErrors]:
    if truth is None:
        return None
    return StageErrors(
        rotation_deg=rotation_error(ext.rotation, truth.R),
        translation=translation_error(ext.translation, truth.t),
        translation_direction=translation_direction_error(ext.translation, truth.t),
    )


def _stage_result(name: str, estimate: StageEstimate, truth: Optional[GroundTruthDocument]) -> StageResult:
    ext = estimate.extrinsics.normalized()
    return StageResult(
        stage=name,
        fundamental=np.asarray(estimate.fundamental).tolist(),
        R=ext.rotation.tolist(),
        t=ext.translation.tolist(),
        mirror=MirrorDocument.from_plane(estimate.mirror) if estimate.mirror is not None else None,
        errors=_stage_errors(ext, truth),
    )


def _final_from_inliers(corr: CorrespondenceSet, result: RansacResult, K: Intrinsics) -> StageEstimate:
    """Decompose the inlier-refit F; cheirality votes use the inliers only."""
    inliers = corr.subset(result.inliers)
    E = essential_from_fundamental(result.fundamental, K)
    mirror, extrinsics = extract_mirror(E, inliers, K)
    return StageEstimate(result.fundamental.matrix, extrinsics, mirror)


def run_calibration(
    pair: PoseSequencePair,
    K: Intrinsics,
    config: Optional[PipelineConfig] = None,
    skip_refine: bool = False,
    skip_ransac: bool = False,
    truth: Optional[GroundTruthDocument] = None,
) -> CalibrationRun:
    """
    Run every enabled stage and build the report. The final stage is 'full'
    (or 'init' when refinement and RANSAC are both skipped).
    """
    config = config or PipelineConfig()
    estimates: Dict[str, StageEstimate] = {}
    refined: Optional[RefineResult] = None
    consensus: Optional[RansacResult] = None

    with stage("correspondences"):
        corr = build_correspondences(pair, config.min_confidence)
    logger.info(f"{len(corr)} correspondences over {len(pair)} frames")

    if "baseline1" in config.baselines:
        with stage("baseline1"):
            baseline = estimate_unconstrained_extrinsics(corr, K)
            estimates["baseline1"] = StageEstimate(baseline.fundamental, baseline.extrinsics)

    with stage("init"):
        initial = estimate_virtual_camera(corr, K)
        estimates["init"] = StageEstimate(initial.fundamental.matrix, initial.extrinsics, initial.mirror)

    refine_cfg = config.refine_settings()
    common = dict(
        table=config.anthropometry,
        geman_mcclure_scale=config.geman_mcclure_scale,
        min_confidence=config.min_confidence,
        variation=config.variation,
    )

    if "baseline2" in config.baselines:
        with stage("baseline2"):
            fixed = refine_joints(
                pair, K, initial.extrinsics, refine_cfg.model_copy(update={"update_extrinsics_each_iteration": False}),
                **common,
            )
            if fixed.estimate is None:
                estimates["baseline2"] = estimates["init"]
            else:
                estimates["baseline2"] = StageEstimate(
                    fixed.estimate.fundamental.matrix, fixed.extrinsics, fixed.estimate.mirror
                )

    working = corr
    current = estimates["init"]
    if not skip_refine:
        with stage("refine"):
            refined = refine_joints(pair, K, initial.extrinsics, refine_cfg, **common)
            working = refined.tracks.correspondences()
            if refined.estimate is not None:
                current = StageEstimate(
                    refined.estimate.fundamental.matrix, refined.extrinsics, refined.estimate.mirror
                )
            estimates["refine"] = current

    if not skip_ransac:
        with stage("ransac"):
            consensus = ransac_fundamental(working, config.ransac)
        with stage("full"):
            estimates["full"] = _final_from_inliers(working, consensus, K)
    elif not skip_refine:
        estimates["full"] = current

    final_name = "full" if "full" in estimates else "init"
    final = estimates[final_name]
    final_ext = final.extrinsics.normalized()

    report = CalibrationReport(
        tool_version=APP_VERSION,
        config_hash=config.fingerprint(),
        units=pair.units,
        intrinsics=IntrinsicsDocument(**K.model_dump()),
        correspondences=len(corr),
        frames=len(pair),
        R=final_ext.rotation.tolist(),
        t=final_ext.translation.tolist(),
        mirror=MirrorDocument.from_plane(final.mirror or initial.mirror),
        stages={name: _stage_result(name, estimates[name], truth) for name in STAGE_ORDER if name in estimates},
        inliers=_inlier_stats(consensus, len(working)),
        refine=_refine_stats(refined),
        assignment=dict(pair.metadata) if "assignment" in pair.metadata else {},
    )
    logger.info(f"✅ Calibration finished: final stage '{final_name}'")
    return CalibrationRun(report, estimates, refined, consensus)


def _inlier_stats(result: Optional[RansacResult], total: int) -> Optional[InlierStats]:
    if result is None:
        return None
    return InlierStats(
        total_pairs=total,
        inliers=int(result.inliers.size),
        threshold=result.threshold,
        best_iteration=result.best_iteration,
        mean_inlier_distance=result.mean_inlier_distance,
        refit_accepted=result.refit_accepted,
    )


def _refine_stats(result: Optional[RefineResult]) -> Optional[RefineStats]:
    if result is None:
        return None
    return RefineStats(
        objective_trace=list(result.objective_trace),
        outer_iterations=result.outer_iterations,
        stop_reason=result.stop_reason,
        excluded_reprojection_terms=result.excluded_reprojection_terms,
        hip_loss_enabled=result.hip_loss_enabled,
    )


# ============================================
# EVALUATION
# ============================================
def evaluate_report(report: CalibrationReport, truth: GroundTruthDocument, scene: str) -> List[StageMetrics]:
    """One metrics row per stage in the report."""
    if report.units is not None and truth.units != report.units:
        raise ScaleMismatch(f"report is in '{report.units}', ground truth in '{truth.units}'")
    return [
        stage_metrics(scene, name, result.R, result.t, truth.R, truth.t, truth.units)
        for name, result in report.stages.items()
    ]


def evaluate_reports(pairs: Sequence[Tuple[str, CalibrationReport, GroundTruthDocument]]) -> EvaluationResult:
    rows: List[StageMetrics] = []
    for scene, report, truth in pairs:
        with stage("evaluate"):
            rows.extend(evaluate_report(report, truth, scene))
    return EvaluationResult(rows=rows, summary=summarize(rows) if rows else [])


# ============================================
# TRIANGULATION
# ============================================
def stage_extrinsics(report: CalibrationReport, source: str) -> VirtualExtrinsics:
    if source not in report.stages:
        raise ConfigError(f"report has no '{source}' stage (available: {sorted(report.stages)})")
    result = report.stages[source]
    return VirtualExtrinsics(np.asarray(result.R), np.asarray(result.t))


def ground_truth_points(truth: GroundTruthDocument) -> np.ndarray:
    return np.array(
        [[p if p is not None else (np.nan, np.nan, np.nan) for p in frame] for frame in truth.X], dtype=float
    )


def triangulate_sequence(
    pair: PoseSequencePair,
    K: Intrinsics,
    report: CalibrationReport,
    source: str = "full",
    truth: Optional[GroundTruthDocument] = None,
    min_confidence: float = 0.3,
) -> TriangulationResult:
    """3D joints from the observed 2D joints and one stage's extrinsics."""
    with stage("triangulate"):
        ext = stage_extrinsics(report, source)
        tracks = pair.to_tracks(min_confidence)
        names = tuple(j.value for j in tracks.joints)
        points = triangulate_dlt(tracks.real, tracks.mirror, K, ext, tracks.mask, names)

        error = None
        if truth is not None:
            gt = ground_truth_points(truth)
            columns = [truth.joints.index(name) if name in truth.joints else -1 for name in names]
            if -1 in columns or np.max(tracks.frame_indices, initial=-1) >= len(gt):
                raise MalformedDocument("ground truth does not cover the triangulated joints or frames")
            gt = gt[tracks.frame_indices][:, columns]
            scale = 1000.0 if truth.units == "m" else 1.0
            error = pa_mpjpe(points.points, gt, points.valid, unit_scale=scale)
            logger.info(f"PA-MPJPE ({source}): {error:.3f}")

    X = [
        [tuple(p) if ok else None for p, ok in zip(frame.tolist(), valid)]
        for frame, valid in zip(points.points, points.valid)
    ]
    return TriangulationResult(
        source=source,
        joints=list(names),
        X=X,
        pa_mpjpe_mm=error,
        valid_fraction=float(points.valid.mean()) if points.valid.size else 0.0,
    )
