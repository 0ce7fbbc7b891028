import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from dgecn.errors import DegenerateInput, InvalidDepth, PointBehindCamera, ValidationError
from dgecn.geometry import (
    CameraIntrinsics,
    Pose,
    backproject,
    geodesic_angle,
    is_rotation,
    procrustes,
    project,
    random_rotation,
    rot_x,
    rot_z,
    rotation_from_6d,
    rotation_to_6d,
    transform_point,
)


def test_transform_identity():
    np.testing.assert_array_equal(transform_point(Pose.identity(), [1, 2, 3]), [1, 2, 3])


def test_transform_pure_translation():
    pose = Pose(np.eye(3), [0, 0, 1])
    np.testing.assert_array_equal(transform_point(pose, [0, 0, 0]), [0, 0, 1])


def test_transform_axis_rotation():
    pose = Pose(rot_z(math.pi / 2), np.zeros(3))
    np.testing.assert_allclose(transform_point(pose, [1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_project_optical_axis(intr):
    np.testing.assert_allclose(project(intr, [0, 0, 2]), [320, 240])


def test_project_offset(intr):
    np.testing.assert_allclose(project(intr, [1, 0, 2]), [720, 240])


@pytest.mark.parametrize("z", [-1.0, 0.0, 1e-10])
def test_project_behind_camera(intr, z):
    with pytest.raises(PointBehindCamera):
        project(intr, [0, 0, z])


def test_backproject_examples(intr):
    np.testing.assert_allclose(backproject(intr, [320, 240], 2.0), [0, 0, 2])
    np.testing.assert_allclose(backproject(intr, [720, 240], 2.0), [1, 0, 2])


@pytest.mark.parametrize("depth", [0.0, -1.0, np.nan, np.inf])
def test_backproject_invalid_depth(intr, depth):
    with pytest.raises(InvalidDepth):
        backproject(intr, [320, 240], depth)


def test_round_trip_random(intr, rng):
    for _ in range(100):
        p = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 10)])
        back = backproject(intr, project(intr, p), p[2])
        assert np.max(np.abs(back - p)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0, 640), v=st.floats(0, 480), z=st.floats(0.1, 100))
def test_round_trip_property(u, v, z):
    intr = CameraIntrinsics(800, 800, 320, 240, 640, 480)
    p = backproject(intr, [u, v], z)
    assert p[2] == pytest.approx(z, abs=1e-12)
    np.testing.assert_allclose(project(intr, p), [u, v], atol=1e-9)


def test_intrinsics_validation():
    with pytest.raises(ValidationError):
        CameraIntrinsics(0, 800, 320, 240, 640, 480)
    with pytest.raises(ValidationError):
        CameraIntrinsics(800, 800, 320, 240, 0, 480)


def test_pose_rejects_non_finite_translation():
    with pytest.raises(ValidationError):
        Pose(np.eye(3), [0, np.nan, 0])


def test_pose_is_immutable():
    pose = Pose(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        pose.translation[0] = 1.0


def test_6d_canonical_and_scale():
    np.testing.assert_allclose(rotation_from_6d([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(rotation_from_6d([2, 0, 0, 0, 3, 0]), np.eye(3), atol=1e-15)


@pytest.mark.parametrize("v", [[1, 0, 0, 1, 0, 0], [0, 0, 0, 0, 1, 0], [1, 0, 0, -3, 0, 0]])
def test_6d_degenerate(v):
    with pytest.raises(DegenerateInput):
        rotation_from_6d(v)


def test_6d_round_trip(rng):
    for _ in range(100):
        R = random_rotation(rng)
        assert np.max(np.abs(rotation_from_6d(rotation_to_6d(R)) - R)) < 1e-9


def test_6d_output_is_rotation(rng):
    for _ in range(100):
        assert is_rotation(rotation_from_6d(rng.normal(size=6)), 1e-9)


def test_geodesic_examples():
    R = rot_x(0.3)
    assert geodesic_angle(R, R) == pytest.approx(0.0, abs=1e-7)
    assert geodesic_angle(np.eye(3), rot_z(math.pi / 2)) == pytest.approx(math.pi / 2, abs=1e-12)
    assert geodesic_angle(np.eye(3), rot_z(math.pi)) == pytest.approx(math.pi, abs=1e-7)


def test_geodesic_symmetric_and_triangle(rng):
    for _ in range(50):
        a, b, c = (random_rotation(rng) for _ in range(3))
        assert geodesic_angle(a, b) == pytest.approx(geodesic_angle(b, a), abs=1e-12)
        assert geodesic_angle(a, c) <= geodesic_angle(a, b) + geodesic_angle(b, c) + 1e-8


def test_rotation_closure(rng):
    for _ in range(100):
        p, q = random_pose(rng), random_pose(rng)
        R = p.compose(q).rotation
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-8
        assert abs(np.linalg.det(R) - 1) < 1e-8


def test_compose_and_inverse(rng):
    p, q = random_pose(rng), random_pose(rng)
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(p.compose(q).apply(x), p.apply(q.apply(x)), atol=1e-12)
    np.testing.assert_allclose(p.inverse().apply(p.apply(x)), x, atol=1e-12)
    np.testing.assert_allclose(p.matrix() @ np.append(x[0], 1), np.append(p.apply(x[0:1])[0], 1), atol=1e-12)


def test_procrustes_recovers_transform(rng):
    pose = random_pose(rng)
    src = rng.normal(size=(20, 3))
    R, t = procrustes(src, pose.apply(src))
    np.testing.assert_allclose(R, pose.rotation, atol=1e-10)
    np.testing.assert_allclose(t, pose.translation, atol=1e-10)
