from fastapi import APIRouter
import logging

from pipeline import evaluate_reports
from schemas import EvaluateRequest, EvaluationResult

router = APIRouter(tags=["Evaluation"])
logger = logging.getLogger(__name__)


@router.post("/evaluate", response_model=EvaluationResult)
def evaluate(request: EvaluateRequest):
    """Per-stage errors of each report plus mean / std / median per stage"""
    result = evaluate_reports([(item.scene, item.report, item.ground_truth) for item in request.items])
    logger.info(f"Evaluated {len(request.items)} report(s)")
    return result
