import numpy as np
import pytest

from mvfuse import CameraModel, RunConfig, SceneSpec, generate


@pytest.fixture
def overhead_camera():
    """Camera 10 m above the origin looking straight down.

    Ground point (1, 2, 0) lands on pixel (600, 300); the origin lands on
    the principal point (500, 500).
    """
    return CameraModel(
        intrinsics=np.array(
            [[1000.0, 0.0, 500.0], [0.0, 1000.0, 500.0], [0.0, 0.0, 1.0]]
        ),
        rotation=np.diag([1.0, -1.0, -1.0]),
        translation=np.array([0.0, 0.0, 10.0]),
        image_size=(1000, 1000),
    )


@pytest.fixture
def axis_camera():
    """Camera at the world origin with the optical axis along world +z."""
    return CameraModel(
        intrinsics=np.array(
            [[1000.0, 0.0, 500.0], [0.0, 1000.0, 500.0], [0.0, 0.0, 1.0]]
        ),
        rotation=np.eye(3),
        translation=np.zeros(3),
        image_size=(1000, 1000),
    )


@pytest.fixture
def config():
    return RunConfig(dt=0.1)


@pytest.fixture(scope="session")
def small_scene():
    """Tiny noiseless closed-loop scene shared across tests."""
    spec = SceneSpec(
        seed=11, num_objects=2, num_cameras=3, frames=8, fps=10.0,
        motion="constant-velocity",
    )
    return generate(spec)
