"""Tests for the joint-refinement loop."""

import numpy as np
import pytest

from eight_point import estimate_virtual_camera
from errors import EmptyCorrespondenceSet
from geometry import extrinsics_from_mirror
from metrics import rotation_error
from pose_ingest import PoseFrame, PoseSequencePair
from refiner import finite_difference_gradient, refine_joints
from schemas import LossWeights, RefineConfig


def _initial(scene, K, clean=False):
    pair = scene.clean if clean else scene.pair
    return estimate_virtual_camera(pair.to_tracks().correspondences(), K)


def test_noiseless_input_is_a_fixed_point(noiseless_scene, K):
    init = _initial(noiseless_scene, K, clean=True)
    cfg = RefineConfig(max_outer_iterations=3, weights=LossWeights(smooth=0.0))
    result = refine_joints(noiseless_scene.clean, K, init.extrinsics, cfg)

    before = noiseless_scene.clean.to_tracks()
    assert np.max(np.abs(result.real - before.real)) < 1e-6
    assert np.max(np.abs(result.mirror - before.mirror)) < 1e-6
    assert rotation_error(result.extrinsics.rotation, init.extrinsics.rotation) < 1e-6


def test_noisy_input_lowers_the_objective(noisy_scene, K):
    init = _initial(noisy_scene, K)
    cfg = RefineConfig(max_outer_iterations=3, quasi_newton_max_steps_per_outer=10)
    result = refine_joints(noisy_scene.pair, K, init.extrinsics, cfg)

    trace = result.objective_trace
    assert trace[-1] < trace[0]
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert result.stop_reason in ("converged", "max_iterations", "objective_increased")
    assert 0 <= result.outer_iterations <= cfg.max_outer_iterations
    assert result.hip_loss_enabled


def test_no_active_terms_leaves_joints_untouched(noisy_scene, K):
    init = _initial(noisy_scene, K)
    cfg = RefineConfig(weights=LossWeights(var=0, sym=0, anth=0, hip=0, smooth=0, repro=0))
    result = refine_joints(noisy_scene.pair, K, init.extrinsics, cfg)
    assert result.stop_reason == "no_active_terms"
    assert result.outer_iterations == 0
    np.testing.assert_array_equal(result.real, noisy_scene.pair.to_tracks().real)
    assert result.extrinsics is init.extrinsics


def test_fixed_extrinsics_mode_reestimates_once(noisy_scene, K):
    init = _initial(noisy_scene, K)
    cfg = RefineConfig(max_outer_iterations=2, quasi_newton_max_steps_per_outer=5, update_extrinsics_each_iteration=False)
    result = refine_joints(noisy_scene.pair, K, init.extrinsics, cfg)
    assert result.estimate is not None
    assert result.extrinsics is result.estimate.extrinsics


def test_refine_is_deterministic(noisy_scene, K):
    init = _initial(noisy_scene, K)
    cfg = RefineConfig(max_outer_iterations=2, quasi_newton_max_steps_per_outer=5)
    a = refine_joints(noisy_scene.pair, K, init.extrinsics, cfg)
    b = refine_joints(noisy_scene.pair, K, init.extrinsics, cfg)
    np.testing.assert_array_equal(a.real, b.real)
    assert a.objective_trace == b.objective_trace


def test_empty_sequence_is_rejected(K, mirror):
    pair = PoseSequencePair((PoseFrame(0, {}, {}),))
    with pytest.raises(EmptyCorrespondenceSet):
        refine_joints(pair, K, extrinsics_from_mirror(mirror))


def test_finite_difference_gradient_of_a_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    x = np.array([0.5, -1.5])
    grad = finite_difference_gradient(lambda v: 0.5 * v @ A @ v, x)
    np.testing.assert_allclose(grad, A @ x, rtol=1e-8, atol=1e-9)
    directional = finite_difference_gradient(lambda v: 0.5 * v @ A @ v, x, direction=np.array([1.0, 0.0]))
    assert directional == pytest.approx((A @ x)[0])
