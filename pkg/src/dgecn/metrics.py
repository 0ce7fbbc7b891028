"""Pose accuracy metrics: ADD, ADD-S, REP, thresholds and AUC of ADD-S."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, TooFewVertices, ValidationError
from .geometry import CameraIntrinsics, Pose, project

ADD_DIAMETER_FRACTION = 0.1
REP_THRESHOLD_PX = 5.0
AUC_MAX_THRESHOLD = 0.10


@dataclass(frozen=True)
class MeshModel:
    """Object-frame vertex cloud in meters."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        if V.shape[0] == 0:
            raise TooFewVertices("mesh must have at least one vertex")
        if not np.all(np.isfinite(V)):
            raise ValidationError("mesh vertices must be finite")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    def __len__(self):
        return self.vertices.shape[0]


@dataclass(frozen=True)
class MetricReport:
    add: float
    add_s: float
    rep: float
    add_correct: bool
    rep_correct: bool


def _vertices(mesh) -> np.ndarray:
    return mesh.vertices if isinstance(mesh, MeshModel) else MeshModel(mesh).vertices


def model_diameter(mesh) -> float:
    V = _vertices(mesh)
    if len(V) < 2:
        raise TooFewVertices("diameter needs at least two vertices")
    best = 0.0
    # row blocks keep memory bounded for large meshes
    for start in range(0, len(V), 1024):
        block = V[start : start + 1024]
        d2 = np.sum((block[:, None, :] - V[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def add(est: Pose, gt: Pose, mesh) -> float:
    V = _vertices(mesh)
    return float(np.mean(np.linalg.norm(est.apply(V) - gt.apply(V), axis=1)))


def add_s(est: Pose, gt: Pose, mesh, method: str = "brute") -> float:
    """Symmetric ADD: each gt-posed vertex matched to its closest est-posed vertex.

    ``method="kdtree"`` gives the same value using a spatial index.
    """
    V = _vertices(mesh)
    pe, pg = est.apply(V), gt.apply(V)
    if method == "kdtree":
        dist, _ = cKDTree(pe).query(pg, k=1)
        return float(np.mean(dist))
    if method != "brute":
        raise ValidationError(f"unknown add_s method {method!r}")
    mins = np.empty(len(pg))
    for start in range(0, len(pg), 512):
        block = pg[start : start + 512]
        d = np.sqrt(np.sum((block[:, None, :] - pe[None, :, :]) ** 2, axis=-1))
        mins[start : start + 512] = d.min(axis=1)
    return float(np.mean(mins))


def rep(est: Pose, gt: Pose, mesh, intr: CameraIntrinsics) -> float:
    """Mean 2D distance between projections; ``inf`` when the estimate puts
    any vertex at or behind the camera plane."""
    V = _vertices(mesh)
    Pe = est.apply(V)
    if np.any(Pe[:, 2] <= 1e-9):
        return float("inf")
    ue = project(intr, Pe)
    ug = project(intr, gt.apply(V))
    return float(np.mean(np.linalg.norm(ue - ug, axis=1)))


def is_add_correct(distance: float, diameter: float) -> bool:
    if not diameter > 0:
        raise ValidationError("diameter must be positive")
    # Scale the distance rather than the diameter: 10 * 0.010 rounds to 0.1
    # exactly, while 0.1 * 0.1 lands just above 0.010.
    return bool(distance * (1.0 / ADD_DIAMETER_FRACTION) < diameter)


def is_rep_correct(rep_px: float) -> bool:
    return bool(rep_px < REP_THRESHOLD_PX)


def auc_add_s(distances, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Normalized area under accuracy(τ) for τ in [0, max_threshold].

    accuracy(τ) is the fraction of distances strictly below τ. Each distance
    ``d`` contributes the interval (d, max] to the area, so the integral is
    exact: ``mean(clip(max - d, 0, max)) / max``.
    """
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size == 0:
        raise EmptyInput("no distances given")
    if np.any(~(d >= 0)):
        raise ValidationError("distances must be non-negative")
    if not max_threshold > 0:
        raise ValidationError("max_threshold must be positive")
    return float(np.mean(np.clip(1.0 - d / max_threshold, 0.0, 1.0)))


def evaluate_pose(
    est: Pose,
    gt: Pose,
    mesh,
    intr: CameraIntrinsics,
    diameter: float | None = None,
) -> MetricReport:
    if diameter is None:
        diameter = model_diameter(mesh)
    a = add(est, gt, mesh)
    r = rep(est, gt, mesh, intr)
    return MetricReport(
        add=a,
        add_s=add_s(est, gt, mesh),
        rep=r,
        add_correct=is_add_correct(a, diameter),
        rep_correct=is_rep_correct(r),
    )
