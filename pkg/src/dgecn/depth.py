"""Depth maps, uncertainty masking between two depth observations, and
k-NN depth feature aggregation (KFA)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientNeighbors, ValidationError

DEFAULT_TAU = 0.05
KFA_DEFAULT_K = 8
KFA_DEFAULT_DIM = 16


@dataclass(frozen=True)
class DepthMap:
    """Row-major (height, width) depth in meters plus a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if vals.ndim != 2 or vals.shape != valid.shape:
            raise DimensionMismatch("values and validity must be matching 2D arrays")
        valid &= np.isfinite(vals) & (vals > 0)
        vals = np.where(valid, vals, np.nan)
        vals.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values) -> "DepthMap":
        """Build from an array where NaN / non-positive marks invalid pixels."""
        vals = np.asarray(values, dtype=np.float64)
        return cls(vals, np.isfinite(vals) & (vals > 0))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def lookup(self, pixels) -> np.ndarray:
        """Depth at the integer pixel containing each continuous pixel; NaN if invalid."""
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        u = np.clip(np.floor(px[:, 0]).astype(np.int64), 0, self.width - 1)
        v = np.clip(np.floor(px[:, 1]).astype(np.int64), 0, self.height - 1)
        return self.values[v, u]


def _check_pair(a: DepthMap, b: DepthMap):
    if a.values.shape != b.values.shape:
        raise DimensionMismatch(f"depth maps differ in size: {a.values.shape} vs {b.values.shape}")


def uncertainty_mask(a: DepthMap, b: DepthMap, tau: float = DEFAULT_TAU) -> np.ndarray:
    """True where |a - b| > tau, or where either map is invalid."""
    _check_pair(a, b)
    if not tau > 0:
        raise ValidationError("tau must be positive")
    both = a.valid & b.valid
    diff = np.abs(np.where(both, a.values, 0.0) - np.where(both, b.values, 0.0))
    return ~both | (diff > tau)


def refine_depth(a: DepthMap, b: DepthMap, tau: float = DEFAULT_TAU, mode: str = "remove") -> DepthMap:
    """Resolve disagreement between two depth observations.

    ``remove`` invalidates uncertain pixels of ``a``. ``mean`` replaces
    uncertain pixels by the average of both maps where both are valid; pixels
    invalid in either map stay invalid since no average exists there.
    """
    mask = uncertainty_mask(a, b, tau)
    if mode == "remove":
        return DepthMap(a.values, a.valid & ~mask)
    if mode == "mean":
        both = a.valid & b.valid
        vals = np.where(mask & both, 0.5 * (a.values + b.values), a.values)
        return DepthMap(vals, a.valid & (both | ~mask))
    raise ValidationError(f"unknown refine mode {mode!r}; expected 'remove' or 'mean'")


def masked_fraction(a: DepthMap, b: DepthMap, tau: float) -> float:
    return float(np.mean(uncertainty_mask(a, b, tau)))


@dataclass
class KfaParams:
    """Two-layer MLP mapping k sorted depth differences to a local feature."""

    k: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.w1.shape[0] != self.k:
            raise DimensionMismatch("first KFA weight must have k rows")

    @classmethod
    def init(cls, k: int = KFA_DEFAULT_K, out_dim: int = KFA_DEFAULT_DIM, hidden: int = 32,
             rng: np.random.Generator | None = None) -> "KfaParams":
        rng = np.random.default_rng(0) if rng is None else rng
        return cls(
            k=k,
            w1=rng.normal(0.0, np.sqrt(2.0 / k), (k, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, out_dim)),
            b2=np.zeros(out_dim),
        )

    @classmethod
    def zeros(cls, k: int = KFA_DEFAULT_K, out_dim: int = KFA_DEFAULT_DIM, hidden: int = 32) -> "KfaParams":
        return cls(k, np.zeros((k, hidden)), np.zeros(hidden), np.zeros((hidden, out_dim)), np.zeros(out_dim))

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def mlp(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        return np.maximum(h @ self.w2 + self.b2, 0.0)


def kfa_neighbors(depth: DepthMap, pixel, k: int, window: int | None = None) -> np.ndarray:
    """(row, col) of the k valid pixels nearest ``pixel`` by image distance.

    The centre pixel itself is excluded. Candidates come from a square window
    (default radius grows with k); ties resolve in row-major order.
    """
    u0 = int(np.floor(pixel[0]))
    v0 = int(np.floor(pixel[1]))
    if not (0 <= u0 < depth.width and 0 <= v0 < depth.height) or not depth.valid[v0, u0]:
        raise ValidationError("KFA pixel must be a valid depth pixel")
    r = window if window is not None else max(2, int(np.ceil(np.sqrt(k))) + 1)
    vs = np.arange(max(0, v0 - r), min(depth.height, v0 + r + 1))
    us = np.arange(max(0, u0 - r), min(depth.width, u0 + r + 1))
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    vv, uu = vv.ravel(), uu.ravel()
    keep = depth.valid[vv, uu] & ~((vv == v0) & (uu == u0))
    vv, uu = vv[keep], uu[keep]
    if len(vv) < k:
        raise InsufficientNeighbors(f"only {len(vv)} valid pixels in window, need {k}")
    d2 = (vv - v0) ** 2 + (uu - u0) ** 2
    # candidates are already row-major, so a stable sort keeps that order on ties
    order = np.argsort(d2, kind="stable")[:k]
    return np.stack([vv[order], uu[order]], axis=1)


def kfa_input(depth: DepthMap, pixel, k: int, window: int | None = None) -> np.ndarray:
    nb = kfa_neighbors(depth, pixel, k, window)
    u0, v0 = int(np.floor(pixel[0])), int(np.floor(pixel[1]))
    diffs = depth.values[nb[:, 0], nb[:, 1]] - depth.values[v0, u0]
    return np.sort(diffs)


def kfa_aggregate(depth: DepthMap, pixel, params: KfaParams, window: int | None = None) -> np.ndarray:
    """Local depth feature of one pixel: MLP over sorted neighbour depth differences."""
    return params.mlp(kfa_input(depth, pixel, params.k, window))
