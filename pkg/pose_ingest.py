"""
2D pose ingestion: OpenPose / HRNet JSON, the generic sequence format,
real-vs-mirror track assignment and symmetric joint matching.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from eight_point import CorrespondenceSet, estimate_virtual_camera
from errors import (
    AmbiguousAssignment,
    CalibrationError,
    EmptyCorrespondenceSet,
    IneligibleJoint,
    MalformedDocument,
    TrackCountMismatch,
    UnsupportedKeypointCount,
)
from geometry import Intrinsics
from ransac import epipolar_distances
from schemas import FrameDocument, SequenceDocument
from triangulation import triangulate_dlt

logger = logging.getLogger(__name__)

DEFAULT_MIN_CONFIDENCE = 0.3
MIN_VALID_JOINTS = 8
TRACK_GATE_FRACTION = 0.25
ASSIGNMENT_MARGIN = 0.05


# ============================================
# JOINTS
# ============================================
class JointId(str, Enum):
    LAnkle = "LAnkle"
    RAnkle = "RAnkle"
    LKnee = "LKnee"
    RKnee = "RKnee"
    LHip = "LHip"
    RHip = "RHip"
    MidHip = "MidHip"
    LShoulder = "LShoulder"
    RShoulder = "RShoulder"
    LElbow = "LElbow"
    RElbow = "RElbow"
    LWrist = "LWrist"
    RWrist = "RWrist"
    Neck = "Neck"
    # pass-through, never used for calibration
    Nose = "Nose"
    LEye = "LEye"
    REye = "REye"
    LEar = "LEar"
    REar = "REar"
    LBigToe = "LBigToe"
    LSmallToe = "LSmallToe"
    LHeel = "LHeel"
    RBigToe = "RBigToe"
    RSmallToe = "RSmallToe"
    RHeel = "RHeel"

    @property
    def is_eligible(self) -> bool:
        return self in ELIGIBLE_JOINTS


ELIGIBLE_JOINTS: Tuple[JointId, ...] = (
    JointId.LAnkle,
    JointId.RAnkle,
    JointId.LKnee,
    JointId.RKnee,
    JointId.LHip,
    JointId.RHip,
    JointId.MidHip,
    JointId.LShoulder,
    JointId.RShoulder,
    JointId.LElbow,
    JointId.RElbow,
    JointId.LWrist,
    JointId.RWrist,
    JointId.Neck,
)

J = JointId
BODY_25_LAYOUT: Tuple[JointId, ...] = (
    J.Nose, J.Neck, J.RShoulder, J.RElbow, J.RWrist, J.LShoulder, J.LElbow, J.LWrist,
    J.MidHip, J.RHip, J.RKnee, J.RAnkle, J.LHip, J.LKnee, J.LAnkle, J.REye, J.LEye,
    J.REar, J.LEar, J.LBigToe, J.LSmallToe, J.LHeel, J.RBigToe, J.RSmallToe, J.RHeel,
)
COCO_18_LAYOUT: Tuple[JointId, ...] = (
    J.Nose, J.Neck, J.RShoulder, J.RElbow, J.RWrist, J.LShoulder, J.LElbow, J.LWrist,
    J.RHip, J.RKnee, J.RAnkle, J.LHip, J.LKnee, J.LAnkle, J.REye, J.LEye, J.REar, J.LEar,
)
# HRNet / COCO keypoints: no Neck, no MidHip
COCO_17_LAYOUT: Tuple[JointId, ...] = (
    J.Nose, J.LEye, J.REye, J.LEar, J.REar, J.LShoulder, J.RShoulder, J.LElbow, J.RElbow,
    J.LWrist, J.RWrist, J.LHip, J.RHip, J.LKnee, J.RKnee, J.LAnkle, J.RAnkle,
)
del J

LAYOUTS: Dict[int, Tuple[JointId, ...]] = {
    25: BODY_25_LAYOUT,
    18: COCO_18_LAYOUT,
    17: COCO_17_LAYOUT,
}


def mirror_joint_match(joint: JointId) -> JointId:
    """The joint label the mirrored person shows for real joint ``joint``."""
    joint = JointId(joint)
    if not joint.is_eligible:
        raise IneligibleJoint(f"{joint.value} is not used for calibration")
    name = joint.value
    if name.startswith("L"):
        return JointId("R" + name[1:])
    if name.startswith("R"):
        return JointId("L" + name[1:])
    return joint


def eligible_joints(layout: Iterable[JointId]) -> Tuple[JointId, ...]:
    """Eligible joints of a layout, in canonical order."""
    present = set(layout)
    return tuple(j for j in ELIGIBLE_JOINTS if j in present)


# ============================================
# KEYPOINTS AND SEQUENCES
# ============================================
@dataclass(frozen=True)
class Keypoint2D:
    u: float
    v: float
    confidence: float
    valid: bool

    @classmethod
    def from_triple(cls, u: float, v: float, confidence: float) -> "Keypoint2D":
        """(0, 0, 0) and non-positive confidence mean 'not detected'."""
        u, v, confidence = float(u), float(v), float(confidence)
        valid = bool(np.isfinite(u) and np.isfinite(v) and np.isfinite(confidence) and confidence > 0)
        return cls(u, v, min(max(confidence, 0.0), 1.0) if np.isfinite(confidence) else 0.0, valid)

    def usable(self, min_confidence: float) -> bool:
        return self.valid and self.confidence >= min_confidence


Detection = Dict[JointId, Keypoint2D]


@dataclass(frozen=True)
class PoseFrame:
    index: int
    real: Mapping[JointId, Keypoint2D]
    mirror: Mapping[JointId, Keypoint2D]


@dataclass(frozen=True)
class JointTracks:
    """
    Dense per-joint arrays. mirror[t, j] holds the mirrored person's joint
    mirror_joint_match(joints[j]), i.e. the reflection of real joint j.
    """

    joints: Tuple[JointId, ...]
    frame_indices: np.ndarray
    real: np.ndarray
    mirror: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mask.shape

    def correspondences(self) -> CorrespondenceSet:
        t_idx, j_idx = np.nonzero(self.mask)
        return CorrespondenceSet(
            self.real[t_idx, j_idx],
            self.mirror[t_idx, j_idx],
            self.frame_indices[t_idx],
            tuple(self.joints[j].value for j in j_idx),
        )

    def with_pixels(self, real: np.ndarray, mirror: np.ndarray) -> "JointTracks":
        return JointTracks(self.joints, self.frame_indices, np.asarray(real, float), np.asarray(mirror, float), self.mask)


@dataclass(frozen=True)
class PoseSequencePair:
    frames: Tuple[PoseFrame, ...]
    frame_rate: float = 30.0
    layout: Tuple[JointId, ...] = BODY_25_LAYOUT
    units: Optional[str] = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    @property
    def joints(self) -> Tuple[JointId, ...]:
        return eligible_joints(self.layout)

    @property
    def has_mid_hip(self) -> bool:
        return JointId.MidHip in self.layout

    def __len__(self) -> int:
        return len(self.frames)

    def subsample(self, indices: Sequence[int]) -> "PoseSequencePair":
        return PoseSequencePair(
            tuple(self.frames[i] for i in indices), self.frame_rate, self.layout, self.units, dict(self.metadata)
        )

    def swapped(self) -> "PoseSequencePair":
        frames = tuple(PoseFrame(f.index, f.mirror, f.real) for f in self.frames)
        return PoseSequencePair(frames, self.frame_rate, self.layout, self.units, dict(self.metadata))

    def to_tracks(self, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> JointTracks:
        joints = self.joints
        T, n_joints = len(self.frames), len(joints)
        real = np.full((T, n_joints, 2), np.nan)
        mirror = np.full((T, n_joints, 2), np.nan)
        mask = np.zeros((T, n_joints), dtype=bool)
        for t, frame in enumerate(self.frames):
            for j, joint in enumerate(joints):
                a = frame.real.get(joint)
                b = frame.mirror.get(mirror_joint_match(joint))
                if a is not None and a.valid:
                    real[t, j] = (a.u, a.v)
                if b is not None and b.valid:
                    mirror[t, j] = (b.u, b.v)
                mask[t, j] = (
                    a is not None and b is not None and a.usable(min_confidence) and b.usable(min_confidence)
                )
        frame_indices = np.array([f.index for f in self.frames], dtype=int)
        return JointTracks(joints, frame_indices, real, mirror, mask)

    # ---------- generic format ----------
    def to_document(self) -> SequenceDocument:
        def encode(keypoints: Mapping[JointId, Keypoint2D]) -> Dict[str, Tuple[float, float, float]]:
            ordered = [j for j in self.layout if j in keypoints]
            return {
                j.value: (keypoints[j].u, keypoints[j].v, keypoints[j].confidence)
                for j in ordered
                if keypoints[j].valid
            }

        return SequenceDocument(
            frame_rate=self.frame_rate,
            units=self.units,
            metadata=dict(sorted(self.metadata.items())),
            frames=[FrameDocument(index=f.index, real=encode(f.real), mirror=encode(f.mirror)) for f in self.frames],
        )

    def to_json(self) -> str:
        return self.to_document().model_dump_json()

    @classmethod
    def from_document(cls, document: SequenceDocument) -> "PoseSequencePair":
        seen = set()

        def decode(entries: Mapping[str, Sequence[float]]) -> Dict[JointId, Keypoint2D]:
            decoded = {}
            for name, triple in entries.items():
                try:
                    joint = JointId(name)
                except ValueError as e:
                    raise MalformedDocument(f"unknown joint name '{name}'") from e
                decoded[joint] = Keypoint2D.from_triple(*triple)
                seen.add(joint)
            return decoded

        frames = tuple(PoseFrame(f.index, decode(f.real), decode(f.mirror)) for f in document.frames)
        layout = tuple(j for j in JointId if j in seen)
        return cls(frames, document.frame_rate, layout, document.units, dict(document.metadata))


def load_sequence(source: Union[str, Path, dict]) -> PoseSequencePair:
    """Read a generic sequence document from a path or a parsed dict."""
    try:
        if isinstance(source, dict):
            document = SequenceDocument.model_validate(source)
        else:
            document = SequenceDocument.model_validate_json(Path(source).read_text())
    except (OSError, ValidationError, ValueError) as e:
        raise MalformedDocument(f"cannot read sequence document: {e}") from e
    return PoseSequencePair.from_document(document)


def build_correspondences(pair: PoseSequencePair, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> CorrespondenceSet:
    """One pair per (frame, eligible joint) usable in both tracks."""
    correspondences = pair.to_tracks(min_confidence).correspondences()
    if len(correspondences) == 0:
        raise EmptyCorrespondenceSet(f"no joint pair reaches confidence {min_confidence}")
    return correspondences


# ============================================
# OPENPOSE PARSING
# ============================================
@dataclass(frozen=True)
class DetectionSequence:
    """Per-frame lists of detected people (multi-person, unlabelled)."""

    frames: Tuple[Tuple[Detection, ...], ...]
    layout: Tuple[JointId, ...]


def _read_document(document) -> dict:
    if isinstance(document, dict):
        return document
    try:
        return json.loads(Path(document).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise MalformedDocument(f"cannot read {document}: {e}") from e


def parse_openpose_json(documents: Sequence[Union[str, Path, dict]]) -> DetectionSequence:
    """
    Parse one OpenPose-style document per frame (people[i].pose_keypoints_2d
    as flat x, y, c triples). People with fewer than 8 valid eligible joints
    are dropped for that frame.
    """
    layout: Optional[Tuple[JointId, ...]] = None
    frames: List[Tuple[Detection, ...]] = []

    for frame_number, document in enumerate(documents):
        payload = _read_document(document)
        people = payload.get("people")
        if not isinstance(people, list):
            raise MalformedDocument(f"frame {frame_number}: missing 'people' array")

        detections: List[Detection] = []
        for person in people:
            flat = person.get("pose_keypoints_2d") if isinstance(person, dict) else None
            if not isinstance(flat, list) or len(flat) % 3 != 0:
                raise MalformedDocument(f"frame {frame_number}: malformed pose_keypoints_2d")
            count = len(flat) // 3
            if count not in LAYOUTS:
                raise UnsupportedKeypointCount(f"frame {frame_number}: {count} keypoints per person")
            if layout is None:
                layout = LAYOUTS[count]
            elif LAYOUTS[count] != layout:
                raise MalformedDocument(f"frame {frame_number}: keypoint layout changes mid-sequence")

            detection = {
                joint: Keypoint2D.from_triple(*flat[3 * i:3 * i + 3]) for i, joint in enumerate(layout)
            }
            eligible_valid = sum(1 for j, kp in detection.items() if j.is_eligible and kp.valid)
            if eligible_valid >= MIN_VALID_JOINTS:
                detections.append(detection)
        frames.append(tuple(detections))

    logger.info(f"Parsed {len(frames)} OpenPose frames ({sum(len(f) for f in frames)} detections)")
    return DetectionSequence(tuple(frames), layout or BODY_25_LAYOUT)


def load_openpose_directory(directory: Union[str, Path]) -> DetectionSequence:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise MalformedDocument(f"no JSON documents in {directory}")
    return parse_openpose_json(paths)


# ============================================
# TRACKING AND REAL / MIRROR ASSIGNMENT
# ============================================
def _centroid(detection: Detection) -> np.ndarray:
    points = np.array([(kp.u, kp.v) for kp in detection.values() if kp.valid])
    return points.mean(axis=0)


def track_two_people(sequence: DetectionSequence, image_width: float) -> Tuple[List[Optional[Detection]], List[Optional[Detection]]]:
    """Nearest-centroid association of two persons across frames."""
    for number, detections in enumerate(sequence.frames):
        if len(detections) > 2:
            raise TrackCountMismatch(f"frame {number}: {len(detections)} people detected, expected 2")

    seeds = [d for d in sequence.frames if len(d) == 2]
    if not seeds:
        raise TrackCountMismatch("no frame shows exactly two people")
    last = sorted((_centroid(d) for d in seeds[0]), key=lambda c: (c[0], c[1]))
    gate = TRACK_GATE_FRACTION * image_width

    tracks: Tuple[List[Optional[Detection]], List[Optional[Detection]]] = ([], [])
    for detections in sequence.frames:
        assigned: List[Optional[Detection]] = [None, None]
        centroids = [_centroid(d) for d in detections]
        best_cost, best_slots = np.inf, ()
        for slots in itertools.permutations(range(2), len(detections)):
            distances = [np.linalg.norm(centroids[i] - last[s]) for i, s in enumerate(slots)]
            if all(dist <= gate for dist in distances) and sum(distances) < best_cost:
                best_cost, best_slots = sum(distances), slots
        for i, slot in enumerate(best_slots):
            assigned[slot] = detections[i]
            last[slot] = centroids[i]
        tracks[0].append(assigned[0])
        tracks[1].append(assigned[1])
    return tracks


def _pair_from_tracks(
    real: Sequence[Optional[Detection]],
    mirror: Sequence[Optional[Detection]],
    layout: Tuple[JointId, ...],
    frame_rate: float,
) -> PoseSequencePair:
    frames = tuple(PoseFrame(i, dict(a or {}), dict(b or {})) for i, (a, b) in enumerate(zip(real, mirror)))
    return PoseSequencePair(frames, frame_rate, layout)


def score_labeling(pair: PoseSequencePair, K: Intrinsics, min_confidence: float) -> Tuple[float, float]:
    """
    (fraction of triangulated real joints on the camera side of the recovered
    mirror, mean epipolar distance) for one real/mirror labeling.
    """
    try:
        corr = build_correspondences(pair, min_confidence)
        estimate = estimate_virtual_camera(corr, K)
        points = triangulate_dlt(corr.real, corr.mirror, K, estimate.extrinsics)
    except CalibrationError as e:
        logger.debug(f"Labeling could not be scored: {e}")
        return 0.0, float("inf")

    valid = points.valid
    if not np.any(valid):
        return 0.0, float("inf")
    in_front = estimate.mirror.signed_distance(points.points[valid]) < 0
    distances = epipolar_distances(estimate.fundamental.matrix, corr.real, corr.mirror)
    return float(np.mean(in_front)), float(np.mean(distances[np.isfinite(distances)]))


def assign_real_mirror_tracks(
    sequence: DetectionSequence,
    K: Intrinsics,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    frame_rate: float = 30.0,
    subsample: int = 100,
) -> PoseSequencePair:
    """
    Track the two people and decide which one is the real person. Both
    labelings are estimated on <= ``subsample`` frames; the real person must
    triangulate between the camera and the mirror.
    """
    image_width, _ = K.image_size
    track_a, track_b = track_two_people(sequence, image_width)

    candidates = [
        ("track_0_real", _pair_from_tracks(track_a, track_b, sequence.layout, frame_rate)),
        ("track_1_real", _pair_from_tracks(track_b, track_a, sequence.layout, frame_rate)),
    ]
    T = len(sequence.frames)
    indices = np.unique(np.linspace(0, T - 1, min(T, subsample)).round().astype(int))

    scores = [score_labeling(pair.subsample(indices), K, min_confidence) for _, pair in candidates]
    (front_a, g_a), (front_b, g_b) = scores
    logger.info(
        f"Assignment scores: track_0_real front={front_a:.3f} g={g_a:.3f}px, "
        f"track_1_real front={front_b:.3f} g={g_b:.3f}px"
    )
    if abs(front_a - front_b) < ASSIGNMENT_MARGIN:
        raise AmbiguousAssignment(
            f"real/mirror labelings indistinguishable (front fractions {front_a:.3f} vs {front_b:.3f})"
        )

    choice = 0 if front_a > front_b else 1
    label, pair = candidates[choice]
    front, g = scores[choice]
    metadata = {
        "assignment": label,
        "front_fraction": f"{front:.6f}",
        "front_fraction_other": f"{scores[1 - choice][0]:.6f}",
        "mean_epipolar_distance": f"{g:.6f}",
    }
    logger.info(f"✅ Real/mirror assignment: {label}")
    return PoseSequencePair(pair.frames, pair.frame_rate, pair.layout, pair.units, metadata)
