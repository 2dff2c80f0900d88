"""Suite-level accuracy runs. Slow: deselected unless ``-m slow`` is given."""

import numpy as np
import pytest

from config import PipelineConfig
from conftest import exact_config
from pipeline import run_calibration, triangulate_sequence
from schemas import NoiseSpec, RansacConfig
from synth import generate_benchmark_suite, generate_suite_scenes

pytestmark = pytest.mark.slow

SUITE_SIZE = 31


def test_noiseless_suite_is_exact():
    specs = generate_benchmark_suite(20, seed=2024, frames=100, noise=NoiseSpec(mean=0.0, std=0.0), bone_length_jitter=0.0)
    config = exact_config(baselines=[], ransac=RansacConfig(iterations=200))
    for scene in generate_suite_scenes(specs, workers=4):
        report = run_calibration(scene.pair, scene.spec.intrinsics, config, truth=scene.ground_truth()).report
        assert report.stages["init"].errors.rotation_deg < 1e-5
        assert report.stages["init"].errors.translation_direction < 1e-5
        assert report.stages["full"].errors.rotation_deg < 1e-4


@pytest.fixture(scope="module")
def noisy_suite():
    """Default pipeline over the 4 px benchmark suite: (scene, report) per scene."""
    specs = generate_benchmark_suite(SUITE_SIZE, seed=7, frames=100, noise=NoiseSpec(mean=0.076, std=4.0))
    config = PipelineConfig(baselines=["baseline1"])
    runs = []
    for scene in generate_suite_scenes(specs, workers=4):
        report = run_calibration(scene.pair, scene.spec.intrinsics, config, truth=scene.ground_truth()).report
        runs.append((scene, report))
    return runs


def _median_rotation(runs, stage: str) -> float:
    return float(np.median([report.stages[stage].errors.rotation_deg for _, report in runs]))


def test_noisy_suite_rotation_ranking(noisy_suite):
    baseline1 = _median_rotation(noisy_suite, "baseline1")
    init = _median_rotation(noisy_suite, "init")
    full = _median_rotation(noisy_suite, "full")
    assert full < init < baseline1
    assert full <= 0.5 * baseline1


def test_refinement_does_not_worsen_the_initial_rotation(noisy_suite):
    assert len(noisy_suite) >= 20
    assert _median_rotation(noisy_suite, "refine") <= _median_rotation(noisy_suite, "init")


def test_full_extrinsics_lower_pa_mpjpe(noisy_suite):
    # noise-free 2D joints, so the error left is the one the extrinsics introduce
    gains = []
    for scene, report in noisy_suite:
        truth = scene.ground_truth()
        K = scene.spec.intrinsics
        init = triangulate_sequence(scene.clean, K, report, "init", truth).pa_mpjpe_mm
        full = triangulate_sequence(scene.clean, K, report, "full", truth).pa_mpjpe_mm
        assert full < init
        gains.append((init - full) / init)
    assert np.median(gains) >= 0.25
