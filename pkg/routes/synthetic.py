from fastapi import APIRouter
from typing import List
import logging

from config import settings
from schemas import SynthRequest, SynthScene
from synth import DEFAULT_INTRINSICS, generate_benchmark_suite, generate_suite_scenes

router = APIRouter(tags=["Synthetic Scenes"])
logger = logging.getLogger(__name__)


@router.post("/synth", response_model=List[SynthScene])
def synthesize(request: SynthRequest):
    """Generate synthetic scenes with their ground truth"""
    K = request.intrinsics.to_intrinsics() if request.intrinsics else DEFAULT_INTRINSICS
    specs = generate_benchmark_suite(
        request.n_scenes,
        request.seed,
        frames=request.frames,
        intrinsics=K,
        noise=request.noise,
        dropout=request.dropout,
        bone_length_jitter=request.bone_length_jitter,
    )
    scenes = generate_suite_scenes(specs, workers=settings.MAX_WORKERS)
    return [
        SynthScene(spec=scene.spec, sequence=scene.pair.to_document(), ground_truth=scene.ground_truth())
        for scene in scenes
    ]
