"""Rigid poses, rotations and the pinhole camera.

Camera looks down +z, image origin is the top-left corner and v grows
downward. All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InvalidDepth, PointBehindCamera, ValidationError

_ORTHO_TOL = 1e-9
_MIN_Z = 1e-9


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


def is_rotation(R, tol: float = _ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol
    )


def check_rotation(R, tol: float = _ORTHO_TOL) -> np.ndarray:
    if not is_rotation(R, tol):
        raise ValidationError("matrix is not a proper rotation (R^T R = I, det = +1)")
    return np.asarray(R, dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping object coordinates to camera coordinates."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(t)):
            raise ValidationError("translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        P = np.asarray(points, dtype=np.float64)
        return P @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise ValidationError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError("image size must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [
                [self.focal_x, 0.0, self.principal_x],
                [0.0, self.focal_y, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )

    def as_tuple(self) -> tuple:
        return (
            float(self.focal_x),
            float(self.focal_y),
            float(self.principal_x),
            float(self.principal_y),
            int(self.width),
            int(self.height),
        )


def transform_point(pose: Pose, p) -> np.ndarray:
    return pose.rotation @ np.asarray(p, dtype=np.float64) + pose.translation


def project(intr: CameraIntrinsics, p_cam) -> np.ndarray:
    """Project camera-frame point(s) to pixels.

    Accepts a single 3-vector or an (N, 3) array; raises
    :class:`PointBehindCamera` if any depth is at or below 1e-9.
    """
    P = np.asarray(p_cam, dtype=np.float64)
    z = P[..., 2]
    if np.any(~(z > _MIN_Z)):
        raise PointBehindCamera("point at or behind the camera plane (z <= 1e-9)")
    u = intr.focal_x * P[..., 0] / z + intr.principal_x
    v = intr.focal_y * P[..., 1] / z + intr.principal_y
    return np.stack([u, v], axis=-1)


def backproject(intr: CameraIntrinsics, pixel, depth) -> np.ndarray:
    """Lift pixel(s) with depth to camera-frame points (inverse of :func:`project`)."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise InvalidDepth("depth must be finite and positive")
    x = (px[..., 0] - intr.principal_x) / intr.focal_x * d
    y = (px[..., 1] - intr.principal_y) / intr.focal_y * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_6d(v) -> np.ndarray:
    """Decode two 3-vectors into a rotation via Gram-Schmidt.

    ``v`` is either a length-6 array or a pair of 3-vectors. The first vector
    gives column 1, the orthogonalized second gives column 2, and their cross
    product gives column 3.
    """
    a = np.asarray(v, dtype=np.float64).reshape(2, 3)
    a1, a2 = a[0], a[1]
    n1 = np.linalg.norm(a1)
    if not n1 > 1e-12:
        raise DegenerateInput("first 6D vector is (near) zero")
    b1 = a1 / n1
    n2 = np.linalg.norm(a2)
    # sin of the angle between the two vectors
    if not n2 > 1e-12 or np.linalg.norm(np.cross(b1, a2)) / n2 <= 1e-6:
        raise DegenerateInput("6D vectors are parallel")
    u = a2 - (b1 @ a2) * b1
    b2 = u / np.linalg.norm(u)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def rotation_to_6d(R) -> np.ndarray:
    """First two columns of ``R`` flattened as (col1, col2)."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


def geodesic_angle(a, b) -> float:
    """Angle in radians of the relative rotation ``a^T b``."""
    c = (np.trace(np.asarray(a).T @ np.asarray(b)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation on SO(3) from a uniformly sampled unit quaternion."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
            np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
            np.sqrt(u1) * np.sin(2 * np.pi * u3),
            np.sqrt(u1) * np.cos(2 * np.pi * u3),
        ]
    )
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def procrustes(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform ``(R, t)`` with ``dst ≈ R src + t``.

    SVD-based with reflection correction.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        D[2, 2] = -1.0
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs
