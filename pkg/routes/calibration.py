from fastapi import APIRouter
import logging

from config import load_pipeline_config
from pipeline import run_calibration, triangulate_sequence
from pose_ingest import PoseSequencePair
from schemas import CalibrateRequest, CalibrationReport, TriangulateRequest, TriangulationResult

router = APIRouter(tags=["Calibration"])
logger = logging.getLogger(__name__)


@router.post("/calibrate", response_model=CalibrationReport)
def calibrate(request: CalibrateRequest):
    """Run the full pipeline on a generic sequence document"""
    config = load_pipeline_config(None, request.config)
    pair = PoseSequencePair.from_document(request.sequence)
    K = request.intrinsics.to_intrinsics()

    run = run_calibration(pair, K, config, request.skip_refine, request.skip_ransac, request.ground_truth)
    logger.info(f"✅ Calibrated {len(pair)} frames via API")
    return run.report


@router.post("/triangulate", response_model=TriangulationResult)
def triangulate(request: TriangulateRequest):
    """3D joints from a sequence and one stage of a calibration report"""
    pair = PoseSequencePair.from_document(request.sequence)
    return triangulate_sequence(
        pair,
        request.intrinsics.to_intrinsics(),
        request.report,
        request.source,
        request.ground_truth,
        request.min_confidence,
    )
