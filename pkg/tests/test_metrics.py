"""Tests for extrinsics errors, Procrustes alignment and summary tables."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from errors import DegenerateCloud, NotARotation, ZeroTranslation
from metrics import (
    METRIC_COLUMNS,
    metrics_table,
    pa_mpjpe,
    procrustes_align,
    rotation_error,
    stage_metrics,
    summarize,
    translation_direction_error,
    translation_error,
)
from schemas import StageMetrics


def test_rotation_error_identity_is_zero():
    assert rotation_error(np.eye(3), np.eye(3)) == pytest.approx(0.0, abs=1e-7)


def test_rotation_error_ten_degrees_about_z():
    R = Rotation.from_euler("z", 10.0, degrees=True).as_matrix()
    assert rotation_error(R, np.eye(3)) == pytest.approx(10.0)
    assert rotation_error(np.eye(3), R) == pytest.approx(10.0)


def test_rotation_error_rejects_reflections():
    with pytest.raises(NotARotation):
        rotation_error(np.diag([-1.0, 1.0, 1.0]), np.eye(3))


@pytest.mark.parametrize(
    "t_est, t_gt, expected",
    [
        ((0.0, 0.0, 2.0), (0.0, 0.0, 1.0), 0.0),
        ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), np.sqrt(2.0)),
        ((0.0, 0.0, 0.5), (0.0, 0.0, -3.0), 6.0),
    ],
)
def test_translation_error_rescales_the_estimate(t_est, t_gt, expected):
    assert translation_error(t_est, t_gt) == pytest.approx(expected)


def test_translation_direction_error_is_scale_free():
    assert translation_direction_error((0.0, 0.0, 1.0), (0.0, 0.0, 7.0)) == pytest.approx(0.0)
    assert translation_direction_error((1.0, 0.0, 0.0), (0.0, 5.0, 0.0)) == pytest.approx(np.sqrt(2.0))


def test_translation_error_zero_estimate():
    with pytest.raises(ZeroTranslation):
        translation_error((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))


def test_procrustes_recovers_a_similarity(rng):
    X = rng.normal(size=(14, 3))
    R = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
    Y = 2.5 * X @ R.T + np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(procrustes_align(Y, X), X, atol=1e-9)
    assert pa_mpjpe(Y, X) == pytest.approx(0.0, abs=1e-9)


def test_procrustes_never_reflects(rng):
    X = rng.normal(size=(14, 3))
    mirrored = X * np.array([-1.0, 1.0, 1.0])
    assert pa_mpjpe(mirrored, X) > 0.1


def test_procrustes_rejects_collinear_points():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateCloud):
        procrustes_align(line, line)


def test_pa_mpjpe_units_and_mask(rng):
    X = rng.normal(size=(3, 14, 3))
    noisy = X + rng.normal(scale=0.01, size=X.shape)
    metres = pa_mpjpe(noisy, X)
    assert pa_mpjpe(noisy, X, unit_scale=1000.0) == pytest.approx(1000.0 * metres)

    valid = np.ones((3, 14), dtype=bool)
    valid[0] = False
    noisy[0] += 10.0
    assert pa_mpjpe(noisy, X, valid) < 0.05


def test_pa_mpjpe_without_valid_frames():
    with pytest.raises(DegenerateCloud):
        pa_mpjpe(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)))


def test_stage_metrics_millimetres_only_for_metres():
    R = np.eye(3)
    row = stage_metrics("s", "init", R, (0.0, 0.0, 1.0), R, (0.0, 0.1, 1.0), units="m")
    assert row.translation_error_mm == pytest.approx(1000.0 * row.translation_error)
    assert stage_metrics("s", "init", R, (0.0, 0.0, 1.0), R, (0.0, 0.1, 1.0)).translation_error_mm is None


def _rows():
    return [
        StageMetrics(scene="a", stage="init", rotation_error_deg=1.0, translation_error=0.1),
        StageMetrics(scene="b", stage="init", rotation_error_deg=3.0, translation_error=0.3),
        StageMetrics(scene="a", stage="full", rotation_error_deg=0.5, translation_error=0.05),
    ]


def test_summarize_population_statistics():
    summary = {(s.stage, s.statistic): s for s in summarize(_rows())}
    assert summary[("init", "mean")].rotation_error_deg == pytest.approx(2.0)
    assert summary[("init", "std")].rotation_error_deg == pytest.approx(1.0)
    assert summary[("init", "median")].translation_error == pytest.approx(0.2)
    assert summary[("full", "std")].rotation_error_deg == pytest.approx(0.0)
    assert summary[("init", "mean")].translation_error_mm is None


def test_metrics_table_layout():
    table = metrics_table(_rows())
    assert list(table.columns) == METRIC_COLUMNS
    assert len(table) == 3 + 2 * 3
    assert table.iloc[0]["stage"] == "full"
    assert set(table["scene"].iloc[3:]) == {"mean", "std", "median"}
