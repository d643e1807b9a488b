import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatwear.core import CameraModel
from splatwear.render import PosedGaussianSet, rasterize
from splatwear.skinning import BodyDefinition, build_skinning_field
from splatwear.synthgen import SynthSpec, generate_scene


def random_gaussian_set(rng, n, layers=(1, 2, 3, 4), depth_range=(2.0, 4.0),
                        scale_range=(0.01, 0.1)):
    from splatwear.core import covariance_from_rotation_scale

    means = rng.uniform(-1.0, 1.0, (n, 3))
    means[:, 2] = rng.uniform(*depth_range, n)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = rng.uniform(*scale_range, (n, 3))
    cov = covariance_from_rotation_scale(quats, scales)
    return PosedGaussianSet(
        means=means,
        covariances=cov,
        opacities=rng.uniform(0.05, 1.0, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        layer_ids=rng.choice(np.asarray(layers, dtype=np.uint8), n),
    )


def frontal_camera(size=64, kind="perspective"):
    if kind == "perspective":
        intr = (60.0, 60.0, size / 2.0, size / 2.0)
    else:
        intr = (size / 3.0, size / 3.0, size / 2.0, size / 2.0)
    return CameraModel(
        kind=kind, rotation=np.eye(3), translation=np.zeros(3),
        intrinsics=intr, image_size=(size, size),
    )


@pytest.fixture(scope="session", autouse=True)
def warm_numba():
    """Compile the jitted kernels once so timed tests see warm caches."""
    rng = np.random.default_rng(0)
    rasterize(random_gaussian_set(rng, 8), frontal_camera(32))


@pytest.fixture(scope="session")
def demo_scene():
    """Small body + skirt + shirt scene shared by read-only tests."""
    return generate_scene(SynthSpec(), ground_truth=True)


@pytest.fixture(scope="session")
def two_corner_body():
    return BodyDefinition(
        rest_joints=np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
        parent_indices=np.array([-1, 0]),
        rest_vertices=np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
        vertex_weights=np.array([[1.0, 0.0], [0.0, 1.0]]),
        vertex_blendshape_offsets=np.zeros((2, 1, 3)),
    )


@pytest.fixture(scope="session")
def field64(two_corner_body):
    """The full-resolution diffused field (built once; ~5 s)."""
    return build_skinning_field(two_corner_body, resolution=(64, 64, 64))
