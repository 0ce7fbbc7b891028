"""Surface keypoint selection by farthest point sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCount, InvalidSeed, ValidationError
from .metrics import MeshModel

DEFAULT_NUM_KEYPOINTS = 8


@dataclass(frozen=True)
class KeypointSet:
    indices: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).ravel()
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if len(idx) != len(pts):
            raise ValidationError("indices and points differ in length")
        if len(np.unique(idx)) != len(idx):
            raise ValidationError("keypoint indices must be distinct")
        idx.setflags(write=False)
        pts.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.indices)

    @classmethod
    def from_mesh(cls, mesh: MeshModel, indices) -> "KeypointSet":
        idx = np.asarray(indices, dtype=np.int64)
        return cls(idx, mesh.vertices[idx])


def centroid_seed(mesh: MeshModel) -> int:
    """Index of the vertex nearest the vertex centroid (lowest index on ties)."""
    V = mesh.vertices
    d = np.sum((V - V.mean(axis=0)) ** 2, axis=1)
    return int(np.argmin(d))


def fps_select(mesh: MeshModel, n: int = DEFAULT_NUM_KEYPOINTS, seed_index: int | None = None) -> KeypointSet:
    """Greedy farthest point sampling.

    Starts at ``seed_index`` (default: :func:`centroid_seed`) and repeatedly
    adds the vertex whose distance to the already-selected set is largest.
    ``np.argmax`` returns the first maximum, which gives lowest-index
    tie-breaking.
    """
    V = mesh.vertices
    count = len(V)
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= count):
        raise InvalidCount(f"n must be in [1, {count}], got {n}")
    if seed_index is None:
        seed_index = centroid_seed(mesh)
    if not (isinstance(seed_index, (int, np.integer)) and 0 <= seed_index < count):
        raise InvalidSeed(f"seed index {seed_index} out of range for {count} vertices")

    selected = [int(seed_index)]
    min_d2 = np.sum((V - V[seed_index]) ** 2, axis=1)
    for _ in range(1, n):
        min_d2[selected] = -1.0
        nxt = int(np.argmax(min_d2))
        selected.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((V - V[nxt]) ** 2, axis=1))
    return KeypointSet.from_mesh(mesh, selected)
