"""Tests for pipeline configuration loading and the small file utilities."""

import json

import pytest

from config import PipelineConfig, load_pipeline_config
from errors import ConfigError
from schemas import AnthropometricTable, LossWeights
from utils import canonical_json, write_json


def test_defaults():
    config = PipelineConfig()
    assert config.min_confidence == 0.3
    assert config.weights == LossWeights()
    assert config.ransac.iterations == 1000
    assert config.baselines == ["baseline1", "baseline2"]
    assert config.anthropometry == AnthropometricTable()


def test_toml_file_and_overrides(tmp_path):
    path = tmp_path / "pipeline.toml"
    path.write_text('min_confidence = 0.5\n\n[ransac]\nthreshold = 3.5\niterations = 50\n\n[weights]\nsmooth = 0.0\n')

    config = load_pipeline_config(str(path), {"ransac": {"iterations": 7, "rng_seed": None}, "variation": None})
    assert config.min_confidence == 0.5
    assert config.ransac.threshold == 3.5
    # flags win over the file, None means "not given"
    assert config.ransac.iterations == 7
    assert config.ransac.rng_seed == 0
    assert config.weights.smooth == 0.0
    assert config.refine_settings().weights.smooth == 0.0


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("MIRRORCALIB_MIN_CONFIDENCE", "0.6")
    monkeypatch.setenv("MIRRORCALIB_RANSAC__THRESHOLD", "1.25")
    config = load_pipeline_config()
    assert config.min_confidence == 0.6
    assert config.ransac.threshold == 1.25


def test_missing_file():
    with pytest.raises(ConfigError):
        load_pipeline_config("/nonexistent/pipeline.toml")


@pytest.mark.parametrize(
    "overrides",
    [
        {"min_confidence": 1.5},
        {"weights": {"var": -1.0}},
        {"ransac": {"sample_size": 5}},
        {"variation": "mad"},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        load_pipeline_config(None, overrides)


def test_anthropometry_requires_unit_femur():
    with pytest.raises(ValueError):
        AnthropometricTable(femur=0.9)


def test_fingerprint_tracks_the_values():
    assert PipelineConfig().fingerprint() == PipelineConfig().fingerprint()
    assert PipelineConfig().fingerprint() != load_pipeline_config(None, {"min_confidence": 0.4}).fingerprint()


def test_canonical_json_is_sorted_and_stable(tmp_path):
    payload = {"b": 1, "a": [1.5, float("inf")]}
    text = canonical_json(payload)
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    path = write_json(tmp_path / "nested" / "out.json", payload)
    assert path.read_text() == text
    assert json.loads(text)["b"] == 1
