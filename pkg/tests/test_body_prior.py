"""Unit tests for the body-prior loss terms and the total objective."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from body_prior import (
    BONES,
    BoneSet,
    bone_lengths,
    geman_mcclure,
    loss_anth,
    loss_hip,
    loss_repro,
    loss_smooth,
    loss_sym,
    loss_var,
    total_objective,
)
from errors import MissingJoint, TooFewFrames, ZeroFemur, ZeroMeanLength
from geometry import project, real_projection_matrix, virtual_projection_matrix
from pose_ingest import JointId
from refiner import JointObjective, finite_difference_gradient
from schemas import AnthropometricTable, LossWeights, RefineConfig

FEMUR_JOINTS = (JointId.RHip, JointId.RKnee, JointId.LHip, JointId.LKnee)
HIP_JOINTS = (JointId.MidHip, JointId.LHip, JointId.RHip)

coordinates = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def _table_lengths(table: AnthropometricTable, frames: int = 1) -> torch.Tensor:
    ratios = [getattr(table, bone.kind) for bone in BONES]
    return torch.tensor(ratios, dtype=torch.float64)[:, None].repeat(1, frames)


def _clean_tracks(scene):
    tracks = scene.clean.to_tracks()
    return torch.tensor(tracks.real), torch.tensor(tracks.mirror), tracks


# ---------------------------------------------------------------------------
# Bones
# ---------------------------------------------------------------------------


def test_bone_set_mirror_pairs():
    bones = BoneSet()
    assert len(bones) == 12
    assert bones.mirror(bones.bones[bones.index("RFemur")]).name == "LFemur"
    partner = bones.mirror_indices()
    assert torch.equal(partner[partner], torch.arange(len(bones)))


def test_bone_set_rejects_unpaired_bones():
    with pytest.raises(ValueError):
        BoneSet(BONES[:1])


def test_bone_set_for_coco17_drops_neck_and_midhip_bones():
    names = {bone.name for bone in BoneSet.for_joints([j for j in JointId if j not in (JointId.Neck, JointId.MidHip)])}
    assert "RScapular" not in names and "LHip" not in names
    assert {"RFemur", "LFemur", "RUlna", "LUlna"} <= names


def test_bone_length_3_4_5():
    X = torch.tensor([[[0.0, 0.0, 0.0], [0.0, 3.0, 4.0], [0.0, 0.0, 0.0], [0.0, 3.0, 4.0]]], dtype=torch.float64)
    lengths, present = bone_lengths(X, FEMUR_JOINTS, BoneSet.for_joints(FEMUR_JOINTS))
    assert lengths.shape == (2, 1)
    assert torch.allclose(lengths, torch.full((2, 1), 5.0, dtype=torch.float64))
    assert present.all()


def test_bone_length_missing_joint():
    with pytest.raises(MissingJoint):
        bone_lengths(torch.zeros(1, 2, 3), (JointId.RHip, JointId.RKnee))


def test_bone_lengths_of_the_static_synthetic_skeleton_are_constant(noiseless_scene):
    X = torch.tensor(noiseless_scene.joints3d.points)
    lengths, _ = bone_lengths(X, noiseless_scene.pair.joints)
    assert torch.allclose(lengths, lengths[:, :1].expand_as(lengths), atol=1e-9)


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def test_loss_var_hand_computed():
    value = loss_var(torch.tensor([[1.0, 1.0, 1.0, 2.0]], dtype=torch.float64))
    assert value.item() == pytest.approx(np.std([1.0, 1.0, 1.0, 2.0]) / 1.25)


def test_loss_var_constant_lengths_is_zero():
    assert loss_var(torch.full((3, 5), 0.4, dtype=torch.float64)).item() == pytest.approx(0.0, abs=1e-12)


def test_loss_var_is_scale_free(rng):
    lengths = torch.tensor(rng.uniform(0.2, 0.6, size=(12, 8)))
    assert loss_var(10.0 * lengths).item() == pytest.approx(loss_var(lengths).item(), rel=1e-9)


def test_loss_var_range_variant():
    value = loss_var(torch.tensor([[1.0, 1.0, 1.0, 2.0]], dtype=torch.float64), variation="range")
    assert value.item() == pytest.approx(1.0 / 1.25)


def test_loss_var_errors():
    with pytest.raises(TooFewFrames):
        loss_var(torch.ones(2, 1, dtype=torch.float64))
    with pytest.raises(ZeroMeanLength):
        loss_var(torch.zeros(1, 3, dtype=torch.float64))


def test_loss_sym_counts_each_pair_twice():
    bones = BoneSet.for_joints(FEMUR_JOINTS)
    lengths = torch.zeros(2, 1, dtype=torch.float64)
    lengths[bones.index("RFemur")] = 1.0
    lengths[bones.index("LFemur")] = 1.1
    assert loss_sym(lengths, bones).item() == pytest.approx(0.2)


def test_loss_sym_is_label_swap_invariant(rng):
    bones = BoneSet()
    lengths = torch.tensor(rng.uniform(0.2, 0.6, size=(12, 4)))
    swapped = lengths[bones.mirror_indices()]
    assert loss_sym(swapped, bones).item() == pytest.approx(loss_sym(lengths, bones).item())


def test_loss_anth_exact_table_is_zero():
    table = AnthropometricTable()
    assert loss_anth(_table_lengths(table, 3), BoneSet(), table).item() == pytest.approx(0.0, abs=1e-12)


def test_loss_anth_single_bone_off_by_a_tenth():
    table = AnthropometricTable()
    lengths = _table_lengths(table)
    lengths[BoneSet().index("RHumerus")] += 0.1
    assert loss_anth(lengths, BoneSet(), table).item() == pytest.approx(0.01)


def test_loss_anth_uses_the_longer_femur():
    table = AnthropometricTable()
    lengths = _table_lengths(table)
    lengths[BoneSet().index("LFemur")] = 2.0
    # everything else is now measured against 2.0
    scaled = _table_lengths(table) / 2.0
    expected = float(((scaled[:, 0] - _table_lengths(table)[:, 0]) ** 2).sum()) - (0.5 - 1.0) ** 2
    assert loss_anth(lengths, BoneSet(), table).item() == pytest.approx(expected)


def test_loss_anth_is_scale_free(rng):
    lengths = torch.tensor(rng.uniform(0.2, 0.6, size=(12, 4)))
    assert loss_anth(7.5 * lengths).item() == pytest.approx(loss_anth(lengths).item(), rel=1e-9)


def test_loss_anth_zero_femur():
    lengths = _table_lengths(AnthropometricTable())
    for name in ("RFemur", "LFemur"):
        lengths[BoneSet().index(name)] = 0.0
    with pytest.raises(ZeroFemur):
        loss_anth(lengths)


def test_loss_hip_unit_cross_product():
    X = torch.tensor([[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]], dtype=torch.float64)
    value, enabled = loss_hip(X, HIP_JOINTS)
    assert enabled
    assert value.item() == pytest.approx(1.0)


def test_loss_hip_collinear_is_zero():
    X = torch.tensor([[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]], dtype=torch.float64)
    assert loss_hip(X, HIP_JOINTS)[0].item() == pytest.approx(0.0, abs=1e-12)


def test_loss_hip_disabled_without_midhip():
    value, enabled = loss_hip(torch.ones(2, 2, 3), (JointId.LHip, JointId.RHip))
    assert not enabled
    assert value.item() == 0.0


def test_loss_smooth_quadratic_trajectory():
    t = torch.arange(5, dtype=torch.float64)
    X = torch.zeros(5, 1, 3, dtype=torch.float64)
    X[:, 0, 2] = t**2
    # three interior frames, each contributing 2^2
    assert loss_smooth(X).item() == pytest.approx(12.0)


@given(st.lists(coordinates, min_size=6, max_size=6))
@settings(max_examples=50)
def test_loss_smooth_vanishes_on_affine_motion(values):
    start, velocity = torch.tensor(values[:3], dtype=torch.float64), torch.tensor(values[3:], dtype=torch.float64)
    t = torch.arange(6, dtype=torch.float64)[:, None, None]
    X = start + t * velocity
    assert loss_smooth(X).item() == pytest.approx(0.0, abs=1e-9)


def test_loss_smooth_needs_three_frames():
    with pytest.raises(TooFewFrames):
        loss_smooth(torch.zeros(2, 1, 3, dtype=torch.float64))


@pytest.mark.parametrize("c", [0.5, 1.0, 10.0])
def test_geman_mcclure_shape(c):
    r = torch.tensor([0.0, c, 1e6 * c], dtype=torch.float64)
    rho = geman_mcclure(r, c)
    assert rho[0].item() == 0.0
    assert rho[1].item() == pytest.approx(0.5)
    assert rho[2].item() == pytest.approx(1.0)
    assert bool(torch.all(geman_mcclure(torch.linspace(0, 5 * c, 20), c).diff() > 0))


def test_geman_mcclure_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        geman_mcclure(torch.zeros(1), 0.0)


# ---------------------------------------------------------------------------
# Reprojection and total objective
# ---------------------------------------------------------------------------


def test_loss_repro_vanishes_at_ground_truth(noiseless_scene, K):
    u, u_mirror, tracks = _clean_tracks(noiseless_scene)
    X = torch.tensor(noiseless_scene.joints3d.points)
    value, excluded = loss_repro(u, u_mirror, X, K, noiseless_scene.extrinsics, 10.0, torch.tensor(tracks.mask))
    assert value.item() < 1e-9
    assert excluded == 0


def test_loss_repro_grows_when_a_joint_moves(noiseless_scene, K):
    u, u_mirror, tracks = _clean_tracks(noiseless_scene)
    X = torch.tensor(noiseless_scene.joints3d.points)
    moved = u.clone()
    moved[3, 5, 0] += 2.0
    before, _ = loss_repro(u, u_mirror, X, K, noiseless_scene.extrinsics, 10.0)
    after, _ = loss_repro(moved, u_mirror, X, K, noiseless_scene.extrinsics, 10.0)
    assert after.item() > before.item()


def test_loss_repro_counts_points_behind_the_camera(noiseless_scene, K):
    u, u_mirror, _ = _clean_tracks(noiseless_scene)
    X = torch.tensor(noiseless_scene.joints3d.points)
    X[0, 0, 2] = -1.0
    _, excluded = loss_repro(u, u_mirror, X, K, noiseless_scene.extrinsics, 10.0)
    assert excluded == 1


def test_total_objective_all_weights_zero(noisy_scene, K):
    u, u_mirror, tracks = _clean_tracks(noisy_scene)
    weights = LossWeights(var=0, sym=0, anth=0, hip=0, smooth=0, repro=0)
    result = total_objective(u, u_mirror, K, noisy_scene.extrinsics, weights, AnthropometricTable(), 10.0, tracks.joints)
    assert result.value == 0.0
    assert result.terms == {}


def test_total_objective_single_term_reduces_to_repro(noisy_scene, K):
    tracks = noisy_scene.pair.to_tracks()
    u, u_mirror = torch.tensor(tracks.real), torch.tensor(tracks.mirror)
    weights = LossWeights(var=0, sym=0, anth=0, hip=0, smooth=0, repro=1)
    result = total_objective(u, u_mirror, K, noisy_scene.extrinsics, weights, AnthropometricTable(), 10.0, tracks.joints)
    expected, _ = loss_repro(u, u_mirror, result.points, K, noisy_scene.extrinsics, 10.0, result.valid)
    assert result.value == pytest.approx(expected.item())


def test_total_objective_is_the_weighted_sum_of_its_terms(noisy_scene, K):
    tracks = noisy_scene.pair.to_tracks()
    u, u_mirror = torch.tensor(tracks.real), torch.tensor(tracks.mirror)
    weights = LossWeights(var=2.0, sym=0.5, anth=1.5, hip=0.25, smooth=0.1, repro=3.0)
    result = total_objective(u, u_mirror, K, noisy_scene.extrinsics, weights, AnthropometricTable(), 10.0, tracks.joints)
    assert result.hip_enabled
    expected = sum(getattr(weights, name) * value for name, value in result.terms.items())
    assert set(result.terms) == {"var", "sym", "anth", "hip", "smooth", "repro"}
    assert result.value == pytest.approx(expected, rel=1e-12)
    assert all(value >= 0 for value in result.terms.values())


def test_total_objective_near_zero_on_noiseless_scene(noiseless_scene, K):
    u, u_mirror, tracks = _clean_tracks(noiseless_scene)
    weights = LossWeights(smooth=0.0)
    result = total_objective(u, u_mirror, K, noiseless_scene.extrinsics, weights, AnthropometricTable(), 10.0, tracks.joints)
    assert result.value < 1e-6


def test_reprojection_is_anchored_to_the_detections(noiseless_scene, K):
    u, u_mirror, tracks = _clean_tracks(noiseless_scene)
    ext = noiseless_scene.extrinsics
    mask = torch.tensor(tracks.mask)
    weights = LossWeights(var=0, sym=0, anth=0, hip=0, smooth=0, repro=1)

    # every joint moves 10 cm; the moved pixels stay consistent with the camera pair
    shifted = noiseless_scene.joints3d.points + np.array([0.06, -0.03, 0.08])
    moved = torch.tensor(project(real_projection_matrix(K), shifted).pixels)
    moved_mirror = torch.tensor(project(virtual_projection_matrix(K, ext), shifted).pixels)

    def repro(real, mirror, **observed):
        return total_objective(real, mirror, K, ext, weights, AnthropometricTable(), 10.0, tracks.joints, mask, **observed)

    at_detections = repro(u, u_mirror, observed=u, observed_mirror=u_mirror)
    after_move = repro(moved, moved_mirror, observed=u, observed_mirror=u_mirror)
    assert at_detections.value < 1e-9
    assert after_move.value > 0.2 * int(mask.sum())
    # measured against the variables themselves the move would cost nothing
    assert repro(moved, moved_mirror).value < 1e-9


def test_joint_objective_keeps_the_detections_fixed(noisy_scene, K):
    tracks = noisy_scene.pair.subsample(range(10)).to_tracks()
    weights = LossWeights(var=0, sym=0, anth=0, hip=0, smooth=0, repro=1)
    objective = JointObjective(tracks, K, RefineConfig(weights=weights), AnthropometricTable(), 10.0)
    u, u_mirror = torch.tensor(tracks.real), torch.tensor(tracks.mirror)
    ext = noisy_scene.extrinsics

    start = objective.value(u, u_mirror, ext).value
    moved = objective.value(u + 15.0, u_mirror - 15.0, ext).value
    assert moved > start


def test_gradient_matches_central_differences(noisy_scene, K):
    rng = np.random.default_rng(3)
    frames = len(noisy_scene.pair.frames)
    for _ in range(100):
        first = int(rng.integers(0, frames - 6))
        tracks = noisy_scene.pair.subsample(range(first, first + 6)).to_tracks()
        objective = JointObjective(tracks, K, RefineConfig(), AnthropometricTable(), 10.0)
        # variables away from the detections, which stay the reprojection target
        u = np.nan_to_num(tracks.real) + rng.normal(0.0, 3.0, tracks.real.shape)
        u_mirror = np.nan_to_num(tracks.mirror) + rng.normal(0.0, 3.0, tracks.mirror.shape)
        half = u.size

        def f(flat):
            real = torch.tensor(flat[:half].reshape(u.shape))
            mirror = torch.tensor(flat[half:].reshape(u_mirror.shape))
            return objective.value(real, mirror, noisy_scene.extrinsics).value

        grad_u, grad_mirror = objective.gradient(u, u_mirror, noisy_scene.extrinsics)
        gradient = np.concatenate([grad_u.ravel(), grad_mirror.ravel()])
        x = np.concatenate([u.ravel(), u_mirror.ravel()])

        direction = rng.normal(size=x.size)
        direction /= np.linalg.norm(direction)
        numeric = finite_difference_gradient(f, x, direction)
        analytic = float(gradient @ direction)
        assert abs(numeric - analytic) <= 1e-3 * max(abs(analytic), 1e-6)
