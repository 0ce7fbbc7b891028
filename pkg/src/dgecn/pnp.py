"""EPnP and a RANSAC wrapper around it.

EPnP writes every 3D point as a barycentric combination of a few control
points, finds the control points' camera coordinates in the null space of a
linear system, fixes the scale from inter-control-point distances, and
aligns the result to the model with a Procrustes step.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, NoConsensus, TooFewPoints, ValidationError
from .geometry import CameraIntrinsics, Pose, procrustes

_RANK_TOL = 1e-10
GN_ITERATIONS = 10


def reprojection_errors(pose: Pose, points3d, points2d, intr: CameraIntrinsics) -> np.ndarray:
    """Per-point pixel error; ``inf`` for points at or behind the camera."""
    Pc = pose.apply(points3d)
    z = Pc[:, 2]
    ok = z > 1e-9
    zs = np.where(ok, z, 1.0)
    u = intr.focal_x * Pc[:, 0] / zs + intr.principal_x
    v = intr.focal_y * Pc[:, 1] / zs + intr.principal_y
    err = np.hypot(u - points2d[:, 0], v - points2d[:, 1])
    return np.where(ok, err, np.inf)


def _control_points(Pw: np.ndarray) -> np.ndarray:
    c0 = Pw.mean(axis=0)
    X = Pw - c0
    evals, evecs = np.linalg.eigh(X.T @ X / len(Pw))
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if evals[0] <= 0 or evals[1] <= _RANK_TOL * evals[0]:
        raise DegenerateConfiguration("3D points are collinear (or coincident)")
    dims = 2 if evals[2] <= _RANK_TOL * evals[0] else 3
    ctrl = [c0] + [c0 + np.sqrt(evals[j]) * evecs[:, j] for j in range(dims)]
    return np.array(ctrl)


def _barycentric(Pw: np.ndarray, Cw: np.ndarray) -> np.ndarray:
    B = (Cw[1:] - Cw[0]).T  # 3 x dims
    coeff, *_ = np.linalg.lstsq(B, (Pw - Cw[0]).T, rcond=None)
    coeff = coeff.T
    return np.column_stack([1.0 - coeff.sum(axis=1), coeff])


def _design_matrix(alphas: np.ndarray, U: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    n, nc = alphas.shape
    M = np.zeros((2 * n, 3 * nc))
    for j in range(nc):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * intr.focal_x
        M[0::2, 3 * j + 2] = a * (intr.principal_x - U[:, 0])
        M[1::2, 3 * j + 1] = a * intr.focal_y
        M[1::2, 3 * j + 2] = a * (intr.principal_y - U[:, 1])
    return M


class _BetaSystem:
    """Distance constraints ||sum_k beta_k (v_k[a] - v_k[b])||^2 = rho_ab."""

    def __init__(self, null_vectors: np.ndarray, Cw: np.ndarray):
        nc = Cw.shape[0]
        self.pairs = list(itertools.combinations(range(nc), 2))
        self.V = null_vectors.reshape(null_vectors.shape[0], nc, 3)
        self.S = np.array([[v[a] - v[b] for (a, b) in self.pairs] for v in self.V])  # (N, P, 3)
        self.rho = np.array([np.sum((Cw[a] - Cw[b]) ** 2) for (a, b) in self.pairs])

    def linear_solve(self, N: int):
        """Closed form: least squares on the products beta_k beta_l, k <= l."""
        combos = [(k, l) for k in range(N) for l in range(k, N)]
        if len(combos) > len(self.pairs):
            if N != 4:
                return None
            return self._linear_solve_first_row()
        L = np.column_stack(
            [np.einsum("pi,pi->p", self.S[k], self.S[l]) * (1.0 if k == l else 2.0) for k, l in combos]
        )
        prod, *_ = np.linalg.lstsq(L, self.rho, rcond=None)
        prods = dict(zip(combos, prod))
        beta = np.zeros(N)
        b0 = math.sqrt(abs(prods[(0, 0)]))
        beta[0] = b0
        for k in range(1, N):
            beta[k] = math.sqrt(abs(prods[(k, k)])) * np.sign(prods[(0, k)])
        if prods[(0, 0)] < 0:
            beta = -beta
        return beta

    def _linear_solve_first_row(self):
        # N = 4 has 10 unknown products but only 6 constraints; keep beta_0 * beta_k
        L = np.column_stack([np.einsum("pi,pi->p", self.S[0], self.S[k]) * (1.0 if k == 0 else 2.0)
                             for k in range(4)])
        prod, *_ = np.linalg.lstsq(L, self.rho, rcond=None)
        if prod[0] < 0:
            prod = -prod
        b0 = math.sqrt(abs(prod[0]))
        if b0 == 0.0:
            return None
        return np.concatenate([[b0], prod[1:] / b0])

    def residual(self, beta: np.ndarray):
        N = len(beta)
        D = np.einsum("k,kpi->pi", beta, self.S[:N])
        r = np.sum(D * D, axis=1) - self.rho
        J = 2.0 * np.einsum("pi,kpi->pk", D, self.S[:N])
        return r, J

    def gauss_newton(self, beta: np.ndarray, iterations: int = GN_ITERATIONS) -> np.ndarray:
        for _ in range(iterations):
            r, J = self.residual(beta)
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            if not np.all(np.isfinite(step)):
                break
            beta = beta + step
        return beta

    def control_points(self, beta: np.ndarray) -> np.ndarray:
        return np.einsum("k,kci->ci", beta, self.V[: len(beta)])


def epnp_solve(points3d, points2d, intr: CameraIntrinsics) -> Pose:
    """Camera-from-object pose from >= 4 2D-3D correspondences.

    Closed-form initial scales for null-space dimensions 1 to 4 (1 to 3 for
    planar points) are each polished by Gauss-Newton on the control-point
    distances over the whole null space; the candidate with the lowest mean
    reprojection error wins.
    """
    Pw = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    U = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    if len(Pw) != len(U):
        raise ValidationError("points3d and points2d differ in length")
    if len(Pw) < 4:
        raise TooFewPoints(f"EPnP needs at least 4 correspondences, got {len(Pw)}")
    if not (np.all(np.isfinite(Pw)) and np.all(np.isfinite(U))):
        raise ValidationError("correspondences must be finite")

    Cw = _control_points(Pw)
    alphas = _barycentric(Pw, Cw)
    M = _design_matrix(alphas, U, intr)
    _, svals, Vt = np.linalg.svd(M, full_matrices=True)
    nc = Cw.shape[0]
    width = 4 if nc == 4 else 3
    null_vectors = Vt[::-1][:width]  # smallest singular directions first
    system = _BetaSystem(null_vectors, Cw)

    best, best_err = None, np.inf
    for N in (1, 2, 3, 4)[: width]:
        beta = system.linear_solve(N)
        if beta is None or not np.all(np.isfinite(beta)):
            continue
        # polish in the full null space, not just the case's subspace
        beta = system.gauss_newton(np.pad(beta, (0, width - N)))
        Cc = system.control_points(beta)
        Pc = alphas @ Cc
        if np.mean(Pc[:, 2]) < 0:
            Pc = -Pc
        if not np.all(np.isfinite(Pc)) or np.allclose(Pc, 0.0):
            continue
        R, t = procrustes(Pw, Pc)
        pose = Pose(R, t)
        err = float(np.mean(reprojection_errors(pose, Pw, U, intr)))
        if err < best_err or best is None:
            best, best_err = pose, err
    if best is None:
        raise DegenerateConfiguration("no finite EPnP solution (rank-deficient system)")
    return best


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 200
    inlier_threshold: float = 3.0
    min_sample: int = 4
    confidence: float = 0.999
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValidationError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValidationError("confidence must be in (0, 1)")
        if self.min_sample < 4:
            raise ValidationError("EPnP needs a minimal sample of at least 4")


@dataclass(frozen=True)
class RansacResult:
    pose: Pose
    inlier_mask: np.ndarray
    iterations_used: int


def _required_iterations(inlier_ratio: float, sample: int, confidence: float) -> float:
    w = inlier_ratio ** sample
    if w >= 1.0:
        return 0.0
    if w <= 0.0:
        return np.inf
    return math.log(1.0 - confidence) / math.log(1.0 - w)


def ransac_pnp_arrays(points3d, points2d, intr: CameraIntrinsics, config: RansacConfig = RansacConfig()) -> RansacResult:
    Pw = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    U = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    total = len(Pw)
    if total < config.min_sample:
        raise TooFewPoints(f"need at least {config.min_sample} correspondences, got {total}")
    rng = np.random.default_rng(config.rng_seed)

    best_pose, best_mask, best_count = None, None, 0
    iterations = 0
    while iterations < config.max_iterations:
        iterations += 1
        idx = rng.choice(total, size=config.min_sample, replace=False)
        try:
            pose = epnp_solve(Pw[idx], U[idx], intr)
        except (DegenerateConfiguration, ValidationError):
            continue
        mask = reprojection_errors(pose, Pw, U, intr) < config.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_pose, best_mask, best_count = pose, mask, count
            if iterations >= _required_iterations(count / total, config.min_sample, config.confidence):
                break
        elif iterations >= _required_iterations(best_count / total, config.min_sample, config.confidence):
            break

    if best_mask is None or best_count < config.min_sample:
        raise NoConsensus(f"no hypothesis reached {config.min_sample} inliers in {iterations} iterations")
    try:
        pose = epnp_solve(Pw[best_mask], U[best_mask], intr)
        mask = reprojection_errors(pose, Pw, U, intr) < config.inlier_threshold
    except (DegenerateConfiguration, ValidationError):
        pose, mask = best_pose, best_mask
    if mask.sum() < best_count:
        # the refit lost support; fall back to the winning minimal-sample pose
        pose, mask = best_pose, best_mask
    return RansacResult(pose, mask, iterations)


def ransac_pnp(corrs, config: RansacConfig = RansacConfig()) -> RansacResult:
    """Hypothesize-and-verify EPnP over all hypotheses of a CorrespondenceSet."""
    pts3d, pts2d = corrs.flat()
    return ransac_pnp_arrays(pts3d, pts2d, corrs.intrinsics, config)
