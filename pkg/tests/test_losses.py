import math

import numpy as np
import pytest

from conftest import random_pose
from dgecn.errors import ProbabilityOutOfRange, ValidationError
from dgecn.geometry import Pose
from dgecn.keypoints import KeypointSet
from dgecn.losses import loss_focal, loss_keypoint, loss_pose, loss_total


def _kps(rng, n=8):
    pts = rng.normal(size=(n, 3)) * 0.1
    return KeypointSet(np.arange(n), pts)


def test_pose_loss_examples(rng):
    kps = _kps(rng)
    gt = random_pose(rng)
    assert loss_pose(gt, gt, kps) == 0.0
    delta = np.array([0.01, -0.02, 0.03])
    assert loss_pose(Pose(gt.rotation, gt.translation + delta), gt, kps) == pytest.approx(np.linalg.norm(delta), abs=1e-15)


def test_pose_loss_oracle(rng):
    kps = _kps(rng)
    est, gt = random_pose(rng), random_pose(rng)
    total = 0.0
    for p in kps.points:
        a = est.rotation @ p + est.translation
        b = gt.rotation @ p + gt.translation
        total += math.dist(a, b)
    assert loss_pose(est, gt, kps) == pytest.approx(total / len(kps), abs=1e-12)


def test_pose_loss_zero_iff_equal(rng):
    kps = _kps(rng, 4)
    est, gt = random_pose(rng), random_pose(rng)
    assert loss_pose(est, gt, kps) > 0
    assert loss_pose(gt, Pose(gt.rotation, gt.translation), kps) == 0.0


def test_keypoint_loss_examples(rng):
    gt = rng.uniform(0, 500, size=(8, 2))
    pred = np.repeat(gt[:, None, :], 10, axis=1)
    assert loss_keypoint(pred, gt) == 0.0
    assert loss_keypoint(pred + [3.0, 4.0], gt) == pytest.approx(5.0, abs=1e-12)


def test_keypoint_loss_oracle(rng):
    gt = rng.uniform(0, 500, size=(5, 2))
    pred = rng.uniform(0, 500, size=(5, 7, 2))
    total = sum(math.dist(pred[i, j], gt[i]) for i in range(5) for j in range(7))
    assert loss_keypoint(pred, gt) == pytest.approx(total / 35, abs=1e-12)


def test_keypoint_loss_empty():
    with pytest.raises(ValidationError):
        loss_keypoint(np.zeros((0, 3, 2)), np.zeros((0, 2)))


def test_focal_examples():
    assert loss_focal(np.full(10, 0.5), np.ones(10, bool), alpha=1.0, gamma=0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert loss_focal([1 - 1e-9], [True]) < 1e-6


def test_focal_oracle(rng):
    p = rng.uniform(0.01, 0.99, 50)
    y = rng.random(50) < 0.5
    vals = []
    for pi, yi in zip(p, y):
        pt = pi if yi else 1 - pi
        vals.append(-0.25 * (1 - pt) ** 2 * math.log(pt))
    assert loss_focal(p, y) == pytest.approx(sum(vals) / 50, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_focal_out_of_range(p):
    with pytest.raises(ProbabilityOutOfRange):
        loss_focal([p], [True])


def test_total_examples():
    assert loss_total({"pose": 2.5}, (0, 0, 0, 1)) == 2.5
    assert loss_total({"pose": 2.5, "keypoint": 1.0}, (0, 0, 0, 0)) == 0.0
    assert loss_total({"keypoint": 1.0, "pose": 2.0}, (0, 0, 1, 1)) == 3.0


def test_total_validation():
    with pytest.raises(ValidationError):
        loss_total({"pose": 1.0}, (0, 0, -1, 1))
    with pytest.raises(ValidationError):
        loss_total({"pose": 1.0}, (1, 1))
    with pytest.raises(ValidationError):
        loss_total({"rotation": 1.0}, (1, 1, 1, 1))
