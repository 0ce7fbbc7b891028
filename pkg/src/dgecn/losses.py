"""Training losses: pose, keypoint, focal and their weighted total."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import ProbabilityOutOfRange, ValidationError
from .geometry import Pose

LOSS_NAMES = ("depth", "segmentation", "keypoint", "pose")


def loss_pose(est: Pose, gt: Pose, keypoints) -> float:
    """Mean distance between the model keypoints under ``est`` and ``gt``."""
    pts = keypoints.points if hasattr(keypoints, "points") else np.asarray(keypoints, dtype=np.float64)
    return float(np.mean(np.linalg.norm(est.apply(pts) - gt.apply(pts), axis=1)))


def loss_keypoint(predicted, gt_projections) -> float:
    """Mean pixel distance of every hypothesis to its keypoint's true projection.

    ``predicted`` is a CorrespondenceSet or an (n, m, 2) pixel array;
    ``gt_projections`` is (n, 2).
    """
    px = predicted.pixels if hasattr(predicted, "pixels") else np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(gt_projections, dtype=np.float64).reshape(-1, 1, 2)
    if px.size == 0:
        raise ValidationError("no hypotheses")
    return float(np.mean(np.linalg.norm(px - gt, axis=-1)))


def loss_focal(predicted_prob, label, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean of ``-alpha * (1 - p_t)**gamma * log(p_t)``."""
    p = np.asarray(predicted_prob, dtype=np.float64)
    y = np.asarray(label, dtype=bool)
    if p.shape != y.shape:
        raise ValidationError("probabilities and labels differ in shape")
    if p.size == 0:
        raise ValidationError("empty input")
    if np.any(~((p > 0) & (p < 1))):
        raise ProbabilityOutOfRange("probabilities must lie strictly inside (0, 1)")
    pt = np.where(y, p, 1.0 - p)
    return float(np.mean(-alpha * (1.0 - pt) ** gamma * np.log(pt)))


def loss_total(components: Mapping[str, float], weights) -> float:
    """Weighted sum over depth, segmentation, keypoint and pose terms.

    ``weights`` is a 4-sequence in that order; missing components count as 0.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (4,) or np.any(w < 0):
        raise ValidationError("weights must be four non-negative numbers")
    unknown = set(components) - set(LOSS_NAMES)
    if unknown:
        raise ValidationError(f"unknown loss components {sorted(unknown)}")
    return float(sum(wi * float(components.get(name, 0.0)) for wi, name in zip(w, LOSS_NAMES)))
