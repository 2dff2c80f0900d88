from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from geometry import Intrinsics, MirrorPlane

SCHEMA_VERSION = "1.0"

Vector3 = Tuple[float, float, float]
Matrix3 = Tuple[Vector3, Vector3, Vector3]


# ============================================
# BODY PRIOR SCHEMAS
# ============================================
class LossWeights(BaseModel):
    var: float = Field(1.0, ge=0, allow_inf_nan=False)
    sym: float = Field(1.0, ge=0, allow_inf_nan=False)
    anth: float = Field(1.0, ge=0, allow_inf_nan=False)
    hip: float = Field(1.0, ge=0, allow_inf_nan=False)
    smooth: float = Field(0.1, ge=0, allow_inf_nan=False)
    repro: float = Field(1.0, ge=0, allow_inf_nan=False)

    def active(self) -> Dict[str, float]:
        return {name: value for name, value in self.model_dump().items() if value > 0}


class AnthropometricTable(BaseModel):
    """Expected bone length per bone kind, relative to the femur."""

    femur: float = Field(1.0, gt=0, le=1.5)
    tibia: float = Field(0.83, gt=0, le=1.5)
    humerus: float = Field(0.67, gt=0, le=1.5)
    ulna: float = Field(0.54, gt=0, le=1.5)
    scapular: float = Field(0.40, gt=0, le=1.5)
    hip: float = Field(0.40, gt=0, le=1.5)

    @field_validator("femur")
    @classmethod
    def _femur_is_unit(cls, value):
        if value != 1.0:
            raise ValueError("ratios are normalised by the femur, so femur must be 1")
        return value


# ============================================
# STAGE CONFIG SCHEMAS
# ============================================
class RefineConfig(BaseModel):
    max_outer_iterations: int = Field(10, ge=1)
    quasi_newton_max_steps_per_outer: int = Field(20, ge=1)
    step_length: float = Field(1.0, gt=0)
    history_size: int = Field(10, ge=1)
    convergence_tol: float = Field(1e-6, gt=0)
    gradient_tol: float = Field(1e-7, gt=0)
    update_extrinsics_each_iteration: bool = True
    weights: LossWeights = Field(default_factory=LossWeights)


class RansacConfig(BaseModel):
    sample_size: int = Field(6, ge=6)
    iterations: int = Field(1000, ge=1)
    threshold: float = Field(2.0, gt=0)
    rng_seed: int = 0
    refit_slack: float = Field(0.1, ge=0)
    workers: int = Field(1, ge=1)


# ============================================
# GENERIC SEQUENCE FORMAT
# ============================================
class FrameDocument(BaseModel):
    index: int = Field(ge=0)
    real: Dict[str, Tuple[float, float, float]] = Field(default_factory=dict)
    mirror: Dict[str, Tuple[float, float, float]] = Field(default_factory=dict)


class SequenceDocument(BaseModel):
    """One document per sequence; joints map to [u, v, confidence]."""

    frame_rate: float = Field(30.0, gt=0)
    units: Optional[str] = None
    metadata: Dict[str, str] = Field(default_factory=dict)
    frames: List[FrameDocument]

    @field_validator("frames")
    @classmethod
    def _ordered_frames(cls, frames):
        indices = [frame.index for frame in frames]
        if len(set(indices)) != len(indices):
            raise ValueError("frame indices must be unique")
        return sorted(frames, key=lambda frame: frame.index)


class IntrinsicsDocument(BaseModel):
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def to_intrinsics(self) -> Intrinsics:
        return Intrinsics(**self.model_dump())


# ============================================
# GROUND TRUTH SIDECAR
# ============================================
class MirrorDocument(BaseModel):
    n: Vector3
    d: float

    @classmethod
    def from_plane(cls, mirror: MirrorPlane) -> "MirrorDocument":
        return cls(n=mirror.normal, d=mirror.distance)

    def to_plane(self) -> MirrorPlane:
        return MirrorPlane.from_vector(self.n, self.d)


class GroundTruthDocument(BaseModel):
    mirror: MirrorDocument
    R: Matrix3
    t: Vector3
    X: List[List[Optional[Vector3]]]
    joints: List[str]
    units: str = "m"
    intrinsics: Optional[IntrinsicsDocument] = None


# ============================================
# SYNTHETIC SCENE SCHEMAS
# ============================================
class MotionSpec(BaseModel):
    """Root path plus sinusoidal joint-angle articulation."""

    base_position: Optional[Vector3] = None
    facing_yaw_deg: float = 0.0
    sway_amplitude: float = Field(0.15, ge=0)
    sway_frequency: float = Field(0.2, ge=0)
    yaw_amplitude_deg: float = Field(35.0, ge=0)
    yaw_frequency: float = Field(0.15, ge=0)
    shoulder_amplitude_deg: float = Field(60.0, ge=0)
    elbow_amplitude_deg: float = Field(45.0, ge=0)
    hip_amplitude_deg: float = Field(30.0, ge=0)
    knee_amplitude_deg: float = Field(35.0, ge=0)
    articulation_frequency: float = Field(0.5, ge=0)
    femur_length: float = Field(0.45, gt=0)


class NoiseSpec(BaseModel):
    mean: float = Field(0.076, ge=0)
    std: float = Field(4.0, ge=0)


class SceneSpec(BaseModel):
    intrinsics: Intrinsics
    mirror: MirrorPlane
    frames: int = Field(100, ge=3)
    frame_rate: float = Field(30.0, gt=0)
    motion: MotionSpec = Field(default_factory=MotionSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    dropout: float = Field(0.0, ge=0, lt=1)
    bone_length_jitter: float = Field(0.1, ge=0, le=0.1)
    rng_seed: int = 0
    max_placement_attempts: int = Field(200, ge=1)


# ============================================
# REPORT SCHEMAS
# ============================================
class StageErrors(BaseModel):
    rotation_deg: float
    translation: float
    translation_direction: float


class StageResult(BaseModel):
    stage: str
    fundamental: Matrix3
    R: Matrix3
    t: Vector3
    mirror: Optional[MirrorDocument] = None
    errors: Optional[StageErrors] = None


class InlierStats(BaseModel):
    total_pairs: int
    inliers: int
    threshold: float
    best_iteration: int
    mean_inlier_distance: float
    refit_accepted: bool


class RefineStats(BaseModel):
    objective_trace: List[float]
    outer_iterations: int
    stop_reason: str
    excluded_reprojection_terms: int
    hip_loss_enabled: bool


class CalibrationReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str = SCHEMA_VERSION
    tool_version: str
    config_hash: str
    units: Optional[str] = None
    scale_note: str = "t is unit-norm; the metric scale is not recoverable from image correspondences"
    intrinsics: IntrinsicsDocument
    correspondences: int
    frames: int
    R: Matrix3
    t: Vector3
    mirror: MirrorDocument
    stages: Dict[str, StageResult]
    inliers: Optional[InlierStats] = None
    refine: Optional[RefineStats] = None
    assignment: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _final_stage_present(self):
        if not self.stages:
            raise ValueError("report must contain at least one stage")
        return self


# ============================================
# EVALUATION SCHEMAS
# ============================================
class StageMetrics(BaseModel):
    scene: str
    stage: str
    rotation_error_deg: float
    translation_error: float
    translation_error_mm: Optional[float] = None


class MetricSummary(BaseModel):
    stage: str
    statistic: Literal["mean", "std", "median"]
    rotation_error_deg: float
    translation_error: float
    translation_error_mm: Optional[float] = None


class EvaluationResult(BaseModel):
    rows: List[StageMetrics]
    summary: List[MetricSummary]


class TriangulationResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    source: str
    joints: List[str]
    X: List[List[Optional[Vector3]]]
    pa_mpjpe_mm: Optional[float] = None
    valid_fraction: float


# ============================================
# HTTP REQUEST / RESPONSE SCHEMAS
# ============================================
class CalibrateRequest(BaseModel):
    sequence: SequenceDocument
    intrinsics: IntrinsicsDocument
    config: Dict[str, Any] = Field(default_factory=dict)
    skip_refine: bool = False
    skip_ransac: bool = False
    ground_truth: Optional[GroundTruthDocument] = None


class TriangulateRequest(BaseModel):
    sequence: SequenceDocument
    intrinsics: IntrinsicsDocument
    report: CalibrationReport
    source: Literal["baseline1", "init", "baseline2", "refine", "full"] = "full"
    ground_truth: Optional[GroundTruthDocument] = None
    min_confidence: float = Field(0.3, ge=0, le=1)


class SynthRequest(BaseModel):
    n_scenes: int = Field(1, ge=1, le=64)
    seed: int = 0
    frames: int = Field(100, ge=3, le=2000)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    dropout: float = Field(0.0, ge=0, lt=1)
    bone_length_jitter: float = Field(0.1, ge=0, le=0.1)
    intrinsics: Optional[IntrinsicsDocument] = None


class SynthScene(BaseModel):
    spec: SceneSpec
    sequence: SequenceDocument
    ground_truth: GroundTruthDocument


class EvaluateItem(BaseModel):
    scene: str
    report: CalibrationReport
    ground_truth: GroundTruthDocument


class EvaluateRequest(BaseModel):
    items: List[EvaluateItem] = Field(min_length=1)
