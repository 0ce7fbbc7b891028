"""scikit-learn style wrappers around the pose solvers.

Inputs ``X`` are sequences of :class:`~dgecn.synth.CorrespondenceSet` (or
samples carrying one), targets ``y`` are sequences of
:class:`~dgecn.geometry.Pose`; ``predict`` returns a list of poses.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dgpnp import DgPnpModel, LossWeights, TrainConfig, predict_poses, train
from .errors import CountMismatch, EmptyInput, ValidationError
from .geometry import Pose
from .losses import loss_pose
from .pnp import RansacConfig, epnp_solve, ransac_pnp
from .synth import CorrespondenceSet, SyntheticSample


def check_correspondences(X) -> list:
    """Normalize ``X`` to a non-empty list of CorrespondenceSet."""
    if isinstance(X, (CorrespondenceSet, SyntheticSample)):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, SyntheticSample):
            item = item.correspondences
        if not isinstance(item, CorrespondenceSet):
            raise ValidationError(f"expected CorrespondenceSet, got {type(item).__name__}")
        out.append(item)
    if not out:
        raise EmptyInput("no correspondence sets given")
    return out


def check_poses(y, expected: int | None = None) -> list:
    poses = [y] if isinstance(y, Pose) else list(y)
    for p in poses:
        if not isinstance(p, Pose):
            raise ValidationError(f"expected Pose, got {type(p).__name__}")
    if expected is not None and len(poses) != expected:
        raise CountMismatch(f"{len(poses)} poses for {expected} inputs")
    return poses


def check_Xy(X, y):
    """Accept (X, y) or a list of SyntheticSample with y=None."""
    if y is None:
        samples = list(X)
        if not samples or not all(isinstance(s, SyntheticSample) for s in samples):
            raise ValidationError("y is required unless X holds SyntheticSample objects")
        return [s.correspondences for s in samples], [s.gt_pose for s in samples]
    corrs = check_correspondences(X)
    return corrs, check_poses(y, len(corrs))


class _PoseScoreMixin:
    """``score`` is the negated mean keypoint distance (higher is better)."""

    def score(self, X, y=None):
        corrs, poses = check_Xy(X, y)
        pred = self.predict(corrs)
        return -float(np.mean([loss_pose(p, g, c.keypoints) for p, g, c in zip(pred, poses, corrs)]))


class EPnPEstimator(_PoseScoreMixin, RegressorMixin, BaseEstimator):
    """Closed-form EPnP on every hypothesis; stateless."""

    def fit(self, X, y=None):
        check_correspondences(X)
        self.fitted_ = True
        return self

    def predict(self, X):
        out = []
        for c in check_correspondences(X):
            pts3d, pts2d = c.flat()
            out.append(epnp_solve(pts3d, pts2d, c.intrinsics))
        return out


class RansacPnPEstimator(_PoseScoreMixin, RegressorMixin, BaseEstimator):
    def __init__(self, max_iterations=200, inlier_threshold=3.0, confidence=0.999, random_state=0):
        self.max_iterations = max_iterations
        self.inlier_threshold = inlier_threshold
        self.confidence = confidence
        self.random_state = random_state

    def _config(self) -> RansacConfig:
        return RansacConfig(self.max_iterations, self.inlier_threshold, 4, self.confidence, self.random_state)

    def fit(self, X, y=None):
        check_correspondences(X)
        self._config()
        self.fitted_ = True
        return self

    def predict(self, X):
        cfg = self._config()
        return [ransac_pnp(c, cfg).pose for c in check_correspondences(X)]

    def predict_inliers(self, X):
        cfg = self._config()
        return [ransac_pnp(c, cfg).inlier_mask for c in check_correspondences(X)]


class DGPnPRegressor(_PoseScoreMixin, RegressorMixin, BaseEstimator):
    """Learnable graph-based PnP trained with Adam on the pose loss."""

    def __init__(self, k=8, dims=(6, 64, 64, 128), hidden=256, dynamic=True, bandwidth_mode="gaussian",
                 learning_rate=1e-3, batch_size=32, epochs=30, lr_decay=1.0, loss_weights=(1.0, 1.0, 0.0, 1.0),
                 random_state=0, warm_start=False):
        self.k = k
        self.dims = dims
        self.hidden = hidden
        self.dynamic = dynamic
        self.bandwidth_mode = bandwidth_mode
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_decay = lr_decay
        self.loss_weights = loss_weights
        self.random_state = random_state
        self.warm_start = warm_start

    def fit(self, X, y=None):
        from .dgpnp import TrainingSet

        corrs, poses = check_Xy(X, y)
        n_kp = corrs[0].n
        if any(c.n != n_kp or c.m != corrs[0].m for c in corrs):
            raise ValidationError("all inputs need the same cluster layout")
        kfa_k = 0 if corrs[0].kfa is None else corrs[0].kfa.shape[-1]
        if not (self.warm_start and hasattr(self, "model_")):
            self.model_ = DgPnpModel.init(n_keypoints=n_kp, k=self.k, dims=tuple(self.dims), hidden=self.hidden,
                                          dynamic=self.dynamic, seed=self.random_state, kfa_k=kfa_k,
                                          bandwidth_mode=self.bandwidth_mode)
        X_in, kfa = self.model_.input_arrays(corrs)
        data = TrainingSet(
            X_in, kfa,
            np.stack([c.keypoints.points for c in corrs]),
            np.stack([p.rotation for p in poses]),
            np.stack([p.translation for p in poses]),
            np.zeros(len(corrs)),
        )
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                          rng_seed=self.random_state, weights=LossWeights(*self.loss_weights),
                          init_from_data=not (self.warm_start and hasattr(self, "history_")),
                          lr_decay=self.lr_decay)
        _, history = train(self.model_, data, cfg)
        self.history_ = list(getattr(self, "history_", [])) + history if self.warm_start else history
        self.n_keypoints_ = n_kp
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        corrs = check_correspondences(X)
        if any(c.n != self.n_keypoints_ for c in corrs):
            raise ValidationError(f"model expects {self.n_keypoints_} keypoint clusters")
        return predict_poses(self.model_, corrs)


def make_estimator(name: str, **params):
    table = {"epnp": EPnPEstimator, "ransac": RansacPnPEstimator, "dgpnp": DGPnPRegressor}
    try:
        return table[name](**params)
    except KeyError as exc:
        raise ValidationError(f"unknown solver {name!r}") from exc


__all__ = [
    "DGPnPRegressor",
    "EPnPEstimator",
    "RansacPnPEstimator",
    "check_Xy",
    "check_correspondences",
    "check_poses",
    "make_estimator",
]
