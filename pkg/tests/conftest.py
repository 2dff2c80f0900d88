import numpy as np
import pytest

from config import PipelineConfig
from eight_point import CorrespondenceSet
from geometry import Intrinsics, MirrorPlane, project, real_projection_matrix, reflect_point
from schemas import LossWeights, NoiseSpec, SceneSpec
from synth import generate_scene

SEED = 123

K_DEFAULT = Intrinsics(fx=1100.0, fy=1100.0, cx=960.0, cy=540.0)
MIRROR_DEFAULT = MirrorPlane.from_vector((0.12, -0.05, 1.0), 2.6)


# DATA PREP
def random_mirror(rng: np.random.Generator) -> MirrorPlane:
    """Random plane in front of the camera, normal within ~40 deg of the optical axis."""
    normal = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), 1.0])
    return MirrorPlane.from_vector(normal, rng.uniform(1.5, 4.0))


def points_before_mirror(rng: np.random.Generator, mirror: MirrorPlane, count: int) -> np.ndarray:
    """Points in a box in front of the camera, all on the camera side of the mirror."""
    points = []
    while len(points) < count:
        p = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.5, 0.5), rng.uniform(0.8, 1.4)])
        if mirror.signed_distance(p) < -0.1:
            points.append(p)
    return np.array(points)


def mirrored_correspondences(K: Intrinsics, mirror: MirrorPlane, X: np.ndarray) -> CorrespondenceSet:
    P = real_projection_matrix(K)
    real = project(P, X).pixels
    mirror_px = project(P, reflect_point(X, mirror)).pixels
    return CorrespondenceSet(real, mirror_px)


def exact_config(**overrides) -> PipelineConfig:
    """Default pipeline, without the smoothness prior (non-zero on true motion)."""
    return PipelineConfig(weights=LossWeights(smooth=0.0), **overrides)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(SEED)


@pytest.fixture
def K() -> Intrinsics:
    return K_DEFAULT


@pytest.fixture
def mirror() -> MirrorPlane:
    return MIRROR_DEFAULT


@pytest.fixture
def exact_correspondences(rng, K, mirror) -> CorrespondenceSet:
    return mirrored_correspondences(K, mirror, points_before_mirror(rng, mirror, 60))


@pytest.fixture(scope="session")
def noiseless_scene():
    spec = SceneSpec(
        intrinsics=K_DEFAULT,
        mirror=MIRROR_DEFAULT,
        frames=30,
        noise=NoiseSpec(mean=0.0, std=0.0),
        bone_length_jitter=0.0,
        rng_seed=7,
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def noisy_scene():
    spec = SceneSpec(intrinsics=K_DEFAULT, mirror=MIRROR_DEFAULT, frames=60, rng_seed=11)
    return generate_scene(spec)
