"""
Synthetic ground-truth scenes: a forward-kinematics skeleton walking in
front of a planar mirror, projected into the real and the mirror view with
pixel noise.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from errors import PlacementFailed
from geometry import (
    Intrinsics,
    MirrorPlane,
    VirtualExtrinsics,
    extrinsics_from_mirror,
    project,
    real_projection_matrix,
    reflect_point,
)
from pose_ingest import (
    ELIGIBLE_JOINTS,
    JointId,
    Keypoint2D,
    PoseFrame,
    PoseSequencePair,
    mirror_joint_match,
)
from schemas import (
    AnthropometricTable,
    GroundTruthDocument,
    IntrinsicsDocument,
    MirrorDocument,
    NoiseSpec,
    SceneSpec,
)
from triangulation import Joints3D
from utils import write_json

logger = logging.getLogger(__name__)

DEFAULT_INTRINSICS = Intrinsics(fx=1100.0, fy=1100.0, cx=960.0, cy=540.0)
IN_BOUNDS_FRACTION = 0.95
MIRROR_CLEARANCE = 0.05  # metres between any joint and the mirror
MIN_DEPTH = 0.3
TORSO_RATIO = 1.1  # pelvis-to-neck, relative to the femur
ABDUCTION_DEG = 12.0
UP = np.array([0.0, -1.0, 0.0])  # camera y points down
DISTANCE_RANGE = (1.5, 4.0)
MAX_NORMAL_TILT_DEG = 45.0


@dataclass(frozen=True)
class SyntheticScene:
    spec: SceneSpec
    pair: PoseSequencePair
    clean: PoseSequencePair
    mirror: MirrorPlane
    extrinsics: VirtualExtrinsics
    joints3d: Joints3D

    def ground_truth(self) -> GroundTruthDocument:
        points = self.joints3d.points
        return GroundTruthDocument(
            mirror=MirrorDocument.from_plane(self.mirror),
            R=self.extrinsics.rotation.tolist(),
            t=self.extrinsics.translation.tolist(),
            X=[[tuple(p) for p in frame] for frame in points.tolist()],
            joints=list(self.joints3d.joints),
            units="m",
            intrinsics=IntrinsicsDocument(**self.spec.intrinsics.model_dump()),
        )


# ============================================
# SKELETON
# ============================================
def _bone_lengths(spec: SceneSpec, table: AnthropometricTable, rng: np.random.Generator) -> Dict[str, float]:
    """Per bone kind (shared by both sides), within +-jitter of the table."""
    kinds = ("femur", "tibia", "humerus", "ulna", "scapular", "hip")
    jitter = rng.uniform(-1.0, 1.0, size=len(kinds)) * spec.bone_length_jitter
    femur = spec.motion.femur_length
    return {kind: femur * getattr(table, kind) * (1.0 + j) for kind, j in zip(kinds, jitter)}


def _limb(origin: np.ndarray, forward: np.ndarray, lateral: np.ndarray, angle: np.ndarray, length: float) -> np.ndarray:
    """Segment hanging along -UP, swung by ``angle`` about the lateral axis."""
    down = np.broadcast_to(-UP, forward.shape)
    direction = Rotation.from_rotvec(angle[:, None] * lateral).apply(down)
    return origin + length * direction


def skeleton_trajectory(
    spec: SceneSpec,
    base: np.ndarray,
    lengths: Dict[str, float],
    phases: np.ndarray,
) -> np.ndarray:
    """X of shape (T, 14, 3) in ELIGIBLE_JOINTS order, scene units."""
    motion = spec.motion
    t = np.arange(spec.frames) / spec.frame_rate
    two_pi = 2.0 * np.pi

    yaw = np.radians(motion.facing_yaw_deg + motion.yaw_amplitude_deg * np.sin(two_pi * motion.yaw_frequency * t))
    forward = np.stack([np.sin(yaw), np.zeros_like(yaw), -np.cos(yaw)], axis=1)
    left = np.cross(np.broadcast_to(UP, forward.shape), forward)

    sway = motion.sway_amplitude * np.stack(
        [np.sin(two_pi * motion.sway_frequency * t), np.zeros_like(t), 0.5 * np.sin(0.7 * two_pi * motion.sway_frequency * t + phases[0])],
        axis=1,
    )
    mid_hip = base + sway
    neck = mid_hip + TORSO_RATIO * lengths["femur"] * UP

    w = two_pi * motion.articulation_frequency * t
    joints: Dict[JointId, np.ndarray] = {JointId.MidHip: mid_hip, JointId.Neck: neck}

    for side, sign, phase in (("L", 1.0, phases[1]), ("R", -1.0, phases[1] + np.pi)):
        lateral = sign * left
        # the swing axis is the body's lateral axis; abduction tilts the limb outward
        abduct = Rotation.from_rotvec(np.radians(ABDUCTION_DEG) * sign * forward)
        swing_axis = left

        shoulder = neck + lengths["scapular"] * lateral
        shoulder_angle = np.radians(motion.shoulder_amplitude_deg) * np.sin(w + phase)
        elbow_bend = np.radians(motion.elbow_amplitude_deg) * (0.5 + 0.5 * np.sin(w + phase + phases[2]))
        elbow = shoulder + abduct.apply(_limb(0.0, forward, swing_axis, -shoulder_angle, lengths["humerus"]))
        wrist = elbow + abduct.apply(_limb(0.0, forward, swing_axis, -(shoulder_angle + elbow_bend), lengths["ulna"]))

        hip = mid_hip + lengths["hip"] * lateral
        hip_angle = np.radians(motion.hip_amplitude_deg) * np.sin(w + phase + np.pi)
        knee_bend = np.radians(motion.knee_amplitude_deg) * (0.5 + 0.5 * np.sin(w + phase + np.pi + phases[3]))
        knee = hip + _limb(0.0, forward, swing_axis, -hip_angle, lengths["femur"])
        ankle = knee + _limb(0.0, forward, swing_axis, -(hip_angle - knee_bend), lengths["tibia"])

        joints.update(
            {
                JointId(side + "Shoulder"): shoulder,
                JointId(side + "Elbow"): elbow,
                JointId(side + "Wrist"): wrist,
                JointId(side + "Hip"): hip,
                JointId(side + "Knee"): knee,
                JointId(side + "Ankle"): ankle,
            }
        )

    return np.stack([joints[j] for j in ELIGIBLE_JOINTS], axis=1)


# ============================================
# PLACEMENT
# ============================================
def _in_bounds(pixels: np.ndarray, in_front: np.ndarray, K: Intrinsics) -> np.ndarray:
    width, height = K.image_size
    with np.errstate(invalid="ignore"):
        return (
            in_front
            & (pixels[..., 0] >= 0)
            & (pixels[..., 0] < width)
            & (pixels[..., 1] >= 0)
            & (pixels[..., 1] < height)
        )


def placement_ok(X: np.ndarray, K: Intrinsics, mirror: MirrorPlane) -> bool:
    """Subject between camera and mirror, >= 95% visible in both views."""
    if not np.all(np.isfinite(X)):
        return False
    if np.any(mirror.signed_distance(X) > -MIRROR_CLEARANCE) or np.any(X[..., 2] < MIN_DEPTH):
        return False
    P = real_projection_matrix(K)
    real = project(P, X)
    mirrored = project(P, reflect_point(X, mirror))
    visible_real = _in_bounds(real.pixels, real.in_front, K).mean()
    visible_mirror = _in_bounds(mirrored.pixels, mirrored.in_front, K).mean()
    return bool(visible_real >= IN_BOUNDS_FRACTION and visible_mirror >= IN_BOUNDS_FRACTION)


def _candidate_base(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Pelvis on a random central viewing ray, a random gap in front of the mirror."""
    n, d = spec.mirror.n, spec.mirror.distance
    width, height = spec.intrinsics.image_size
    pixel = np.array([rng.uniform(0.3, 0.7) * width, rng.uniform(0.35, 0.5) * height, 1.0])
    ray = spec.intrinsics.inverse @ pixel
    facing = float(n @ ray)
    if facing <= 0:
        return np.full(3, np.nan)
    gap = rng.uniform(0.35, max(0.4, 0.65 * d))
    return (d - gap) / facing * ray


def place_subject(
    spec: SceneSpec, lengths: Dict[str, float], phases: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Trajectory of the first base position passing placement_ok."""
    if spec.motion.base_position is not None:
        attempts = [np.asarray(spec.motion.base_position, dtype=float)]
    else:
        attempts = (_candidate_base(spec, rng) for _ in range(spec.max_placement_attempts))

    for number, base in enumerate(attempts):
        X = skeleton_trajectory(spec, base, lengths, phases)
        if placement_ok(X, spec.intrinsics, spec.mirror):
            logger.debug(f"Subject placed at {np.round(base, 3).tolist()} after {number + 1} attempts")
            return X
    raise PlacementFailed(
        f"no subject placement visible in both views (mirror d={spec.mirror.distance:.3f})"
    )


# ============================================
# OBSERVATIONS
# ============================================
def pixel_noise(shape: Tuple[int, ...], noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Radial bias of ``mean`` px in a random direction plus N(0, std^2) per axis."""
    theta = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    bias = noise.mean * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return bias + rng.normal(0.0, noise.std, size=shape + (2,))


def _frames(real: np.ndarray, mirror: np.ndarray, keep_real: np.ndarray, keep_mirror: np.ndarray) -> Tuple[PoseFrame, ...]:
    frames = []
    for t in range(real.shape[0]):
        real_kp, mirror_kp = {}, {}
        for j, joint in enumerate(ELIGIBLE_JOINTS):
            if keep_real[t, j]:
                real_kp[joint] = Keypoint2D(float(real[t, j, 0]), float(real[t, j, 1]), 1.0, True)
            if keep_mirror[t, j]:
                # the mirrored person shows real joint j under the swapped label
                mirror_kp[mirror_joint_match(joint)] = Keypoint2D(
                    float(mirror[t, j, 0]), float(mirror[t, j, 1]), 1.0, True
                )
        frames.append(PoseFrame(t, real_kp, mirror_kp))
    return tuple(frames)


def generate_scene(spec: SceneSpec, table: Optional[AnthropometricTable] = None) -> SyntheticScene:
    """Deterministic per spec.rng_seed."""
    table = table or AnthropometricTable()
    seed = spec.rng_seed
    skeleton_rng = np.random.default_rng([seed, 1])
    lengths = _bone_lengths(spec, table, skeleton_rng)
    phases = skeleton_rng.uniform(0.0, 2.0 * np.pi, size=4)

    X = place_subject(spec, lengths, phases, np.random.default_rng([seed, 0]))

    P = real_projection_matrix(spec.intrinsics)
    real = project(P, X).pixels
    mirror = project(P, reflect_point(X, spec.mirror)).pixels

    noise_rng = np.random.default_rng([seed, 2])
    shape = X.shape[:2]
    noisy_real = real + pixel_noise(shape, spec.noise, noise_rng)
    noisy_mirror = mirror + pixel_noise(shape, spec.noise, noise_rng)

    everything = np.ones(shape, dtype=bool)
    if spec.dropout > 0:
        dropout_rng = np.random.default_rng([seed, 3])
        keep_real = dropout_rng.random(shape) >= spec.dropout
        keep_mirror = dropout_rng.random(shape) >= spec.dropout
    else:
        keep_real = keep_mirror = everything

    metadata = {"generator": "synth", "rng_seed": str(seed)}
    pair = PoseSequencePair(
        _frames(noisy_real, noisy_mirror, keep_real, keep_mirror), spec.frame_rate, ELIGIBLE_JOINTS, "m", metadata
    )
    clean = PoseSequencePair(_frames(real, mirror, everything, everything), spec.frame_rate, ELIGIBLE_JOINTS, "m", metadata)

    joints3d = Joints3D(X, np.ones(shape, dtype=bool), tuple(j.value for j in ELIGIBLE_JOINTS))
    logger.info(f"✅ Generated scene seed={seed}: {spec.frames} frames, mirror d={spec.mirror.distance:.3f}")
    return SyntheticScene(spec, pair, clean, spec.mirror, extrinsics_from_mirror(spec.mirror), joints3d)


def write_scene(scene: SyntheticScene, directory, name: str) -> Tuple[Path, Path]:
    """<name>.json (generic sequence) and <name>.gt.json (ground truth sidecar)."""
    directory = Path(directory)
    sequence_path = write_json(directory / f"{name}.json", scene.pair.to_document())
    sidecar_path = write_json(directory / f"{name}.gt.json", scene.ground_truth())
    return sequence_path, sidecar_path


# ============================================
# BENCHMARK SUITE
# ============================================
def random_mirror(rng: np.random.Generator, max_tilt_deg: float = MAX_NORMAL_TILT_DEG) -> MirrorPlane:
    """Uniform on the spherical cap around the optical axis; d in [1.5, 4]."""
    cos_tilt = rng.uniform(np.cos(np.radians(max_tilt_deg)), 1.0)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    sin_tilt = np.sqrt(1.0 - cos_tilt**2)
    normal = (sin_tilt * np.cos(azimuth), sin_tilt * np.sin(azimuth), cos_tilt)
    return MirrorPlane.from_vector(normal, rng.uniform(*DISTANCE_RANGE))


def generate_benchmark_suite(
    n_scenes: int,
    seed: int,
    frames: int = 100,
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
    noise: Optional[NoiseSpec] = None,
    dropout: float = 0.0,
    bone_length_jitter: float = 0.1,
) -> List[SceneSpec]:
    """
    ``n_scenes`` distinct feasible scene specs; infeasible mirror draws are
    resampled.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    rng = np.random.default_rng(seed)
    specs: List[SceneSpec] = []
    budget = 50 * n_scenes

    while len(specs) < n_scenes:
        if budget == 0:
            raise PlacementFailed(f"could only place {len(specs)} of {n_scenes} scenes")
        budget -= 1
        spec = SceneSpec(
            intrinsics=intrinsics,
            mirror=random_mirror(rng),
            frames=frames,
            noise=noise or NoiseSpec(),
            dropout=dropout,
            bone_length_jitter=bone_length_jitter,
            rng_seed=int(rng.integers(0, 2**31 - 1)),
        )
        skeleton_rng = np.random.default_rng([spec.rng_seed, 1])
        lengths = _bone_lengths(spec, AnthropometricTable(), skeleton_rng)
        phases = skeleton_rng.uniform(0.0, 2.0 * np.pi, size=4)
        try:
            place_subject(spec, lengths, phases, np.random.default_rng([spec.rng_seed, 0]))
        except PlacementFailed:
            logger.debug(f"Resampling infeasible scene (d={spec.mirror.distance:.3f})")
            continue
        specs.append(spec)

    logger.info(f"✅ Benchmark suite: {n_scenes} scenes (seed={seed})")
    return specs


def generate_suite_scenes(specs: List[SceneSpec], workers: int = 1) -> List[SyntheticScene]:
    """Scenes in spec order; generation may fan out over a thread pool."""
    if workers <= 1:
        return [generate_scene(spec) for spec in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(generate_scene, specs))
