"""Synthetic sphere benchmark: calibrated virtual camera, gradient
background, and noisy/outlier-corrupted 2D-3D correspondences."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, asdict

import numpy as np

from .depth import DepthMap, KfaParams, kfa_input, refine_depth
from .errors import (
    InsufficientNeighbors,
    InvalidRadius,
    InvalidRate,
    InvalidSigma,
    SphereBehindCamera,
    TooFewVertices,
    ValidationError,
)
from .geometry import CameraIntrinsics, Pose, project, random_rotation
from .keypoints import KeypointSet, fps_select
from .metrics import MeshModel

TRAIN_SPLIT = 0
TEST_SPLIT = 1


def default_camera() -> CameraIntrinsics:
    """640x480 camera, focal length 800, principal point at the image centre."""
    return CameraIntrinsics(800.0, 800.0, 320.0, 240.0, 640, 480)


def make_sphere_model(radius: float = 0.1, count: int = 1000, rng_seed: int = 0) -> MeshModel:
    """Fibonacci lattice on a sphere, randomly rotated by ``rng_seed``."""
    if not (np.isfinite(radius) and radius > 0):
        raise InvalidRadius(f"radius must be positive, got {radius}")
    if count < 4:
        raise TooFewVertices(f"sphere needs at least 4 points, got {count}")
    i = np.arange(count, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    unit = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    unit = unit @ random_rotation(np.random.default_rng(rng_seed)).T
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    return MeshModel(radius * unit)


def sphere_image_extent(center, radius: float, intr: CameraIntrinsics) -> tuple:
    """Exact (u_min, u_max, v_min, v_max) of a sphere's projection.

    Each bound comes from a plane through the camera centre tangent to the
    sphere; for ``x - a z = 0`` tangency gives a quadratic in ``a``.
    """
    cx, cy, cz = (float(c) for c in center)
    if not cz > radius:
        raise SphereBehindCamera("sphere must lie entirely in front of the camera")
    denom = cz * cz - radius * radius
    out = []
    for c, f, p in ((cx, intr.focal_x, intr.principal_x), (cy, intr.focal_y, intr.principal_y)):
        root = radius * np.sqrt(c * c + denom)
        lo, hi = (c * cz - root) / denom, (c * cz + root) / denom
        out += [f * lo + p, f * hi + p]
    return tuple(out)


def sample_pose(rng: np.random.Generator, z_range=(1.0, 2.0), intr: CameraIntrinsics | None = None,
                margin: float = 0.1, object_radius: float = 0.0, max_tries: int = 100) -> Pose:
    """Uniform rotation, depth uniform in ``z_range``, and an object centre
    projecting inside the central ``1 - 2*margin`` of the image.

    With ``object_radius`` the centre is redrawn until the whole sphere of
    that radius projects inside the image (falling back to the optical axis
    after ``max_tries``).
    """
    z_min, z_max = z_range
    if not (0 < z_min < z_max):
        raise ValidationError(f"z_range must satisfy 0 < z_min < z_max, got {z_range}")
    intr = default_camera() if intr is None else intr
    R = random_rotation(rng)
    z = rng.uniform(z_min, z_max)
    if object_radius > 0 and z <= object_radius:
        raise SphereBehindCamera("object would intersect the camera plane")
    lo_u, hi_u = margin * intr.width, (1 - margin) * intr.width
    lo_v, hi_v = margin * intr.height, (1 - margin) * intr.height
    for _ in range(max_tries):
        ru, rv = rng.random(2)
        u = lo_u + ru * (hi_u - lo_u)
        v = lo_v + rv * (hi_v - lo_v)
        t = np.array([(u - intr.principal_x) / intr.focal_x * z, (v - intr.principal_y) / intr.focal_y * z, z])
        if object_radius <= 0:
            return Pose(R, t)
        u0, u1, v0, v1 = sphere_image_extent(t, object_radius, intr)
        if u0 >= 0 and v0 >= 0 and u1 < intr.width and v1 < intr.height:
            return Pose(R, t)
    return Pose(R, np.array([0.0, 0.0, z]))


def gradient_background_rgb(pixel, intr: CameraIntrinsics) -> np.ndarray:
    """Linear colour ramp: r = u/width, g = v/height, b = 0.5."""
    px = np.asarray(pixel, dtype=np.float64)
    r = px[..., 0] / intr.width
    g = px[..., 1] / intr.height
    return np.stack([r, g, np.full_like(r, 0.5)], axis=-1)


def sphere_depth(pixels, center, radius: float, intr: CameraIntrinsics) -> np.ndarray:
    """Front ray/sphere intersection depth (z) per pixel; NaN where the ray misses."""
    px = np.asarray(pixels, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    # ray direction with unit z component: point = s * d, depth = s
    dx = (px[..., 0] - intr.principal_x) / intr.focal_x
    dy = (px[..., 1] - intr.principal_y) / intr.focal_y
    dd = dx * dx + dy * dy + 1.0
    dc = dx * c[0] + dy * c[1] + c[2]
    disc = dc * dc - dd * (c @ c - radius * radius)
    with np.errstate(invalid="ignore"):
        s = (dc - np.sqrt(disc)) / dd
    return np.where((disc >= 0) & (s > 0), s, np.nan)


def render_depth(model: MeshModel | None, pose: Pose, intr: CameraIntrinsics, sphere_radius: float) -> DepthMap:
    """Analytic depth of a sphere centred at the pose translation, sampled at
    integer pixel coordinates."""
    if not pose.translation[2] > sphere_radius:
        raise SphereBehindCamera("sphere must lie entirely in front of the camera")
    vv, uu = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
    d = sphere_depth(np.stack([uu, vv], axis=-1), pose.translation, sphere_radius, intr)
    return DepthMap.from_array(d)


@dataclass(frozen=True)
class Correspondence:
    keypoint_index: int
    pixel: np.ndarray
    rgb: np.ndarray
    depth: float
    is_outlier_gt: bool


@dataclass
class CorrespondenceSet:
    """n keypoints, each with m 2D hypotheses.

    Per-hypothesis arrays have leading shape (n, m); invalid depth is NaN.
    ``kfa`` optionally holds per-hypothesis KFA inputs of shape (n, m, k).
    """

    keypoints: KeypointSet
    pixels: np.ndarray
    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    is_outlier: np.ndarray | None = None
    kfa: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        n = len(self.keypoints)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != n or self.pixels.shape[2] != 2:
            raise ValidationError(f"pixels must have shape ({n}, m, 2), got {self.pixels.shape}")
        m = self.pixels.shape[1]
        self.rgb = np.asarray(self.rgb, dtype=np.float64).reshape(n, m, 3)
        self.depth = np.asarray(self.depth, dtype=np.float64).reshape(n, m)
        if self.is_outlier is None:
            self.is_outlier = np.zeros((n, m), dtype=bool)
        self.is_outlier = np.asarray(self.is_outlier, dtype=bool).reshape(n, m)
        if self.kfa is not None:
            self.kfa = np.asarray(self.kfa, dtype=np.float64).reshape(n, m, -1)

    @property
    def n(self) -> int:
        return self.pixels.shape[0]

    @property
    def m(self) -> int:
        return self.pixels.shape[1]

    @property
    def total(self) -> int:
        return self.n * self.m

    def hypothesis(self, i: int, j: int) -> Correspondence:
        return Correspondence(i, self.pixels[i, j], self.rgb[i, j], float(self.depth[i, j]),
                              bool(self.is_outlier[i, j]))

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """(M, 3) model points and (M, 2) pixels, keypoint-major order."""
        pts = np.repeat(self.keypoints.points, self.m, axis=0)
        return pts, self.pixels.reshape(-1, 2)

    def permuted(self, cluster: int, perm) -> "CorrespondenceSet":
        """Copy with the hypotheses of one cluster reordered."""
        perm = np.asarray(perm)

        def sw(a):
            if a is None:
                return None
            a = a.copy()
            a[cluster] = a[cluster][perm]
            return a

        return CorrespondenceSet(self.keypoints, sw(self.pixels), sw(self.rgb), sw(self.depth),
                                 self.intrinsics, sw(self.is_outlier), sw(self.kfa))


def _clamp_to_image(px: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    out = px.copy()
    out[..., 0] = np.clip(out[..., 0], 0.0, np.nextafter(float(intr.width), 0.0))
    out[..., 1] = np.clip(out[..., 1], 0.0, np.nextafter(float(intr.height), 0.0))
    return out


def outlier_count(rate: float, total: int) -> int:
    """round(rate * total), halves rounded up."""
    return int(np.floor(rate * total + 0.5))


def generate_correspondences(
    keypoints: KeypointSet,
    pose: Pose,
    intr: CameraIntrinsics,
    m: int,
    sigma: float,
    outlier_rate: float,
    rng: np.random.Generator,
    sphere_radius: float | None = None,
    depth_map: DepthMap | None = None,
) -> CorrespondenceSet:
    """Noisy hypotheses around each keypoint's exact projection.

    ``sigma`` is the noise *variance* in px^2 (std = sqrt(sigma)). A
    ``round(outlier_rate * n * m)`` subset of hypotheses is replaced by
    uniform in-image pixels. Depth comes from ``depth_map`` when given,
    otherwise from the analytic sphere of ``sphere_radius`` (inferred from the
    keypoint norms when omitted).
    """
    if not (np.isfinite(sigma) and sigma >= 0):
        raise InvalidSigma(f"sigma must be >= 0, got {sigma}")
    if not (0 <= outlier_rate < 1):
        raise InvalidRate(f"outlier rate must be in [0, 1), got {outlier_rate}")
    if m < 1:
        raise ValidationError("m must be >= 1")
    n = len(keypoints)
    exact = project(intr, pose.apply(keypoints.points))
    px = np.repeat(exact[:, None, :], m, axis=1)
    if sigma > 0:
        px = px + rng.normal(0.0, np.sqrt(sigma), size=px.shape)
    is_out = np.zeros((n, m), dtype=bool)
    k_out = outlier_count(outlier_rate, n * m)
    if k_out:
        chosen = rng.choice(n * m, size=k_out, replace=False)
        is_out.ravel()[chosen] = True
        flat = px.reshape(-1, 2)
        flat[chosen, 0] = rng.uniform(0.0, intr.width, size=k_out)
        flat[chosen, 1] = rng.uniform(0.0, intr.height, size=k_out)
    px = _clamp_to_image(px, intr)
    rgb = gradient_background_rgb(px, intr)
    if depth_map is not None:
        depth = depth_map.lookup(px).reshape(n, m)
    else:
        if sphere_radius is None:
            sphere_radius = float(np.mean(np.linalg.norm(keypoints.points, axis=1)))
        depth = sphere_depth(px, pose.translation, sphere_radius, intr)
    return CorrespondenceSet(keypoints, px, rgb, depth, intr, is_out)


@dataclass(frozen=True)
class SynthConfig:
    """Dataset generation settings; the defaults are the desk-scale benchmark."""

    n_train: int = 20000
    n_test: int = 2000
    sphere_radius: float = 0.1
    sphere_points: int = 1000
    num_keypoints: int = 8
    hypotheses: int = 10
    z_range: tuple = (1.0, 2.0)
    sigma_range: tuple = (0.0, 15.0)
    outlier_range: tuple = (0.1, 0.3)
    depth_noise_std: float = 0.0
    drn_tau: float = 0.05
    kfa_k: int = 0

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ValidationError("dataset sizes must be non-negative and not both zero")
        lo, hi = self.sigma_range
        if not (0 <= lo <= hi <= 15):
            raise InvalidSigma(f"sigma range {self.sigma_range} must lie within [0, 15]")
        lo, hi = self.outlier_range
        if not (0 <= lo <= hi < 1):
            raise InvalidRate(f"outlier range {self.outlier_range} must lie within [0, 1)")
        if self.depth_noise_std < 0:
            raise ValidationError("depth_noise_std must be >= 0")
        object.__setattr__(self, "z_range", tuple(float(z) for z in self.z_range))
        object.__setattr__(self, "sigma_range", tuple(float(s) for s in self.sigma_range))
        object.__setattr__(self, "outlier_range", tuple(float(s) for s in self.outlier_range))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class SyntheticSample:
    correspondences: CorrespondenceSet
    gt_pose: Pose
    model: MeshModel
    sphere_radius: float
    sigma: float = 0.0
    outlier_rate: float = 0.0

    @functools.cached_property
    def depth_map(self) -> DepthMap:
        return render_depth(self.model, self.gt_pose, self.correspondences.intrinsics, self.sphere_radius)


def sample_seed(rng_seed: int, split: int, index: int) -> np.random.SeedSequence:
    """Independent per-sample stream; splits live in disjoint namespaces."""
    return np.random.SeedSequence([int(rng_seed), int(split), int(index)])


@functools.lru_cache(maxsize=8)
def benchmark_object(sphere_radius: float, sphere_points: int, num_keypoints: int, rng_seed: int):
    mesh = make_sphere_model(sphere_radius, sphere_points, rng_seed)
    return mesh, fps_select(mesh, num_keypoints)


def _kfa_inputs(dm: DepthMap, px: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros(px.shape[:-1] + (k,))
    flat_px = px.reshape(-1, 2)
    flat_out = out.reshape(-1, k)
    for idx, p in enumerate(flat_px):
        try:
            flat_out[idx] = kfa_input(dm, p, k)
        except (InsufficientNeighbors, ValidationError):
            pass
    return out


def make_sample(config: SynthConfig, seed: np.random.SeedSequence, mesh: MeshModel, keypoints: KeypointSet,
                intr: CameraIntrinsics | None = None, sigma: float | None = None,
                outlier_rate: float | None = None, pose: Pose | None = None) -> SyntheticSample:
    """One sample. ``sigma``/``outlier_rate`` default to draws from the config ranges."""
    intr = default_camera() if intr is None else intr
    rng = np.random.default_rng(seed)
    gt = sample_pose(rng, config.z_range, intr, object_radius=config.sphere_radius) if pose is None else pose
    s = rng.uniform(*config.sigma_range) if sigma is None else float(sigma)
    rate = rng.uniform(*config.outlier_range) if outlier_rate is None else float(outlier_rate)
    depth_map = None
    need_map = config.depth_noise_std > 0 or config.kfa_k > 0
    if need_map:
        clean = render_depth(mesh, gt, intr, config.sphere_radius)
        depth_map = clean
        if config.depth_noise_std > 0:
            noise_a = rng.normal(0.0, config.depth_noise_std, clean.values.shape)
            noise_b = rng.normal(0.0, config.depth_noise_std, clean.values.shape)
            depth_map = refine_depth(
                DepthMap(clean.values + noise_a, clean.valid),
                DepthMap(clean.values + noise_b, clean.valid),
                config.drn_tau,
                mode="remove",
            )
    corrs = generate_correspondences(keypoints, gt, intr, config.hypotheses, s, rate, rng,
                                     sphere_radius=config.sphere_radius, depth_map=depth_map)
    if config.kfa_k > 0:
        corrs.kfa = _kfa_inputs(depth_map, corrs.pixels, config.kfa_k)
    return SyntheticSample(corrs, gt, mesh, config.sphere_radius, s, rate)


def generate_dataset(config: SynthConfig, rng_seed: int = 0, split: str = "both"):
    """Build the train and/or test splits.

    Sample ``i`` of a split draws from :func:`sample_seed` (seed, split, i),
    so the output is independent of generation order. Returns
    ``(train, test)`` for ``split="both"``, otherwise a single list.
    """
    mesh, kps = benchmark_object(config.sphere_radius, config.sphere_points, config.num_keypoints, rng_seed)
    intr = default_camera()

    def build(split_id, size):
        return [make_sample(config, sample_seed(rng_seed, split_id, i), mesh, kps, intr) for i in range(size)]

    if split == "train":
        return build(TRAIN_SPLIT, config.n_train)
    if split == "test":
        return build(TEST_SPLIT, config.n_test)
    if split != "both":
        raise ValidationError(f"unknown split {split!r}")
    return build(TRAIN_SPLIT, config.n_train), build(TEST_SPLIT, config.n_test)
