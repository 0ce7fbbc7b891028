import numpy as np
import pytest

from dgecn.geometry import CameraIntrinsics, Pose, random_rotation


@pytest.fixture
def intr():
    return CameraIntrinsics(800.0, 800.0, 320.0, 240.0, 640, 480)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, z=(1.0, 3.0)) -> Pose:
    t = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(*z)])
    return Pose(random_rotation(rng), t)
