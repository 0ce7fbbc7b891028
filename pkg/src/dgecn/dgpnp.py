"""Dynamic Graph PnP: pose regression from 2D-3D correspondence clusters.

Each keypoint's cluster of m hypotheses becomes a k-NN graph. Stacked edge
convolutions

    f'_i = sum_j lam_ij * relu(alpha (f_i - f_j) + beta f_i)

(with Gaussian-kernel edge weights ``lam`` normalized per vertex) turn the
cluster into per-vertex features, max pooling gives one descriptor per
keypoint, and an MLP over the concatenated descriptors (in keypoint order)
regresses a 6D rotation code plus translation.

Graph topology and edge weights are constants of each forward pass: the
gradient flows through the features, not through neighbour selection.
"""
from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import autograd as ag
from .autograd import Tape, Tensor
from .errors import ClusterTooSmall, DimensionMismatch, NonFiniteLoss, TapeMismatch, ValidationError
from .geometry import Pose, backproject, is_rotation
from .losses import loss_keypoint

log = logging.getLogger(__name__)

FEATURE_DIM = 6
DEFAULT_K = 8
DEFAULT_DIMS = (6, 64, 64, 128)
DEFAULT_HIDDEN = 256
IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


# ---------------------------------------------------------------- features

def vertex_features(corrs, fallback_depth: float = 1.0) -> np.ndarray:
    """(n, m, 6) features: back-projected xyz (camera frame) and rgb.

    Hypotheses without valid depth are lifted at the median valid depth of
    their cluster (falling back to the sample median, then ``fallback_depth``).
    """
    depth = np.array(corrs.depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    sample_fill = float(np.median(depth[valid])) if valid.any() else float(fallback_depth)
    for i in range(depth.shape[0]):
        row_valid = valid[i]
        fill = float(np.median(depth[i][row_valid])) if row_valid.any() else sample_fill
        depth[i][~row_valid] = fill
    xyz = backproject(corrs.intrinsics, corrs.pixels, depth)
    return np.concatenate([xyz, corrs.rgb], axis=-1)


# ---------------------------------------------------------------- graphs

@dataclass(frozen=True)
class LocalGraph:
    """k-NN graph of one cluster: neighbour indices and edge weights, both (m, k)."""

    neighbors: np.ndarray
    weights: np.ndarray

    @property
    def m(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def build_graphs(features: np.ndarray, k: int, bandwidth_mode: str = "gaussian"):
    """Batched k-NN graphs over clusters of shape (G, m, d).

    Returns ``(neighbors, weights)`` of shape (G, m, k). Neighbours exclude
    the vertex itself; equal distances resolve to the lower index. In
    ``gaussian`` mode ``w_ij ∝ exp(-d_ij^2 / (2 h^2))`` with ``h`` the mean
    neighbour distance of the cluster (uniform ``1/k`` when ``h == 0``);
    ``uniform`` mode always uses ``1/k``.
    """
    X = np.asarray(features, dtype=np.float64)
    G, m, _ = X.shape
    if not 1 <= k < m:
        raise ClusterTooSmall(f"need cluster size m > k >= 1, got m={m}, k={k}")
    diff = X[:, :, None, :] - X[:, None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    d2[:, np.arange(m), np.arange(m)] = np.inf
    nbr = np.argsort(d2, axis=-1, kind="stable")[..., :k]
    if bandwidth_mode == "uniform":
        return nbr, np.full(nbr.shape, 1.0 / k)
    if bandwidth_mode != "gaussian":
        raise ValidationError(f"unknown bandwidth mode {bandwidth_mode!r}")
    dsel = np.sqrt(np.take_along_axis(d2, nbr, axis=-1))
    h = dsel.mean(axis=(1, 2), keepdims=True)
    safe_h = np.where(h > 0, h, 1.0)
    logits = -(dsel * dsel) / (2.0 * safe_h * safe_h)
    # shift by the row max so distant neighbourhoods do not underflow to 0/0
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    return nbr, np.where(h > 0, w, 1.0 / k)


def build_graph(features, k: int = DEFAULT_K, bandwidth_mode: str = "gaussian") -> LocalGraph:
    """k-NN graph of a single cluster of (m, d) vertex features."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("features must be (m, d)")
    nbr, w = build_graphs(X[None], k, bandwidth_mode)
    return LocalGraph(nbr[0], w[0])


# ---------------------------------------------------------------- layers

@dataclass
class EdgeConvLayer:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 2:
            raise DimensionMismatch("alpha and beta must be matrices of the same shape")

    @property
    def in_dim(self) -> int:
        return self.alpha.shape[1]

    @property
    def out_dim(self) -> int:
        return self.alpha.shape[0]


def edge_conv_forward(layer: EdgeConvLayer, features, graph: LocalGraph) -> np.ndarray:
    """One edge convolution over a single cluster; returns (m, out_dim)."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != layer.in_dim:
        raise DimensionMismatch(f"feature dim {F.shape[-1]} != layer input dim {layer.in_dim}")
    A = F @ layer.alpha.T
    C = A + F @ layer.beta.T
    H = np.maximum(C[:, None, :] - A[graph.neighbors], 0.0)
    return np.einsum("mk,mko->mo", graph.weights, H)


def _edge_conv_tensor(alpha: Tensor, beta: Tensor, X: Tensor, nbr: np.ndarray, w: np.ndarray) -> Tensor:
    G, m, d = X.shape
    A = X @ _transpose(alpha)
    C = A + X @ _transpose(beta)
    return _neighbor_aggregate(C, A, nbr, w)


def _neighbor_aggregate(C: Tensor, A: Tensor, nbr: np.ndarray, w: np.ndarray) -> Tensor:
    """Fused ``out_i = sum_j w_ij relu(C_i - A_j)`` over (G, m, o) inputs."""
    G, m, o = C.shape
    flat_idx = (nbr + (np.arange(G) * m)[:, None, None]).reshape(-1)
    pre = C.data[:, :, None, :] - A.data.reshape(G * m, o)[flat_idx].reshape(G, m, -1, o)
    mask = pre > 0
    np.maximum(pre, 0.0, out=pre)
    pre *= w[..., None]
    out = pre.sum(axis=2)

    def back(g):
        gw = g[:, :, None, :] * w[..., None]
        gw *= mask
        gC = gw.sum(axis=2)
        scatter = sparse.csr_matrix(
            (np.ones(flat_idx.size), (flat_idx, np.arange(flat_idx.size))), shape=(G * m, flat_idx.size)
        )
        gA = -np.asarray(scatter @ gw.reshape(-1, o)).reshape(G, m, o)
        return gC, gA

    return ag._op(out, (C, A), back)


def _transpose(t: Tensor) -> Tensor:
    return ag._op(t.data.T, (t,), lambda g: (g.T,))


# ---------------------------------------------------------------- model

@dataclass
class DgPnpModel:
    """Edge-convolution stack plus pose head.

    ``head_w1`` maps the concatenated per-keypoint descriptors (``n *
    dims[-1]``) to the hidden layer; ``head_w2`` maps it to 6D rotation code
    + translation. With ``kfa_w1`` set, every vertex also carries a learned
    depth-context feature from its KFA inputs.
    """

    layers: list
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    n_keypoints: int
    k: int = DEFAULT_K
    dynamic: bool = True
    bandwidth_mode: str = "gaussian"
    fallback_depth: float = 1.0
    kfa_w1: np.ndarray | None = None
    kfa_b1: np.ndarray | None = None
    kfa_w2: np.ndarray | None = None
    kfa_b2: np.ndarray | None = None
    input_shift: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(FEATURE_DIM))
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        dims = [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]
        for prev, layer in zip(self.layers, self.layers[1:]):
            if layer.in_dim != prev.out_dim:
                raise DimensionMismatch("edge-conv layer dimensions do not chain")
        if self.head_w1.shape[0] != dims[-1] * self.n_keypoints:
            raise DimensionMismatch(
                f"head input {self.head_w1.shape[0]} != {dims[-1]} x {self.n_keypoints} keypoints"
            )
        if self.head_w2.shape[1] != 9:
            raise DimensionMismatch("head must output 9 values (6D rotation + translation)")
        expected_in = FEATURE_DIM + (self.kfa_w2.shape[1] if self.uses_kfa else 0)
        if dims[0] != expected_in:
            raise DimensionMismatch(f"first layer expects {dims[0]} features, inputs have {expected_in}")

    @property
    def uses_kfa(self) -> bool:
        return self.kfa_w1 is not None

    @classmethod
    def init(cls, n_keypoints: int = 8, k: int = DEFAULT_K, dims=DEFAULT_DIMS, hidden: int = DEFAULT_HIDDEN,
             dynamic: bool = True, seed: int = 0, kfa_k: int = 0, kfa_dim: int = 16, kfa_hidden: int = 32,
             bandwidth_mode: str = "gaussian", head_scale: float = 1e-2) -> "DgPnpModel":
        """He-initialized model whose head starts near identity rotation, zero translation."""
        rng = np.random.default_rng(seed)
        dims = list(dims)
        if kfa_k:
            dims[0] = FEATURE_DIM + kfa_dim
        layers = []
        for din, dout in zip(dims[:-1], dims[1:]):
            s = np.sqrt(2.0 / din)
            layers.append(EdgeConvLayer(rng.normal(0, s, (dout, din)), rng.normal(0, s, (dout, din))))
        fan = dims[-1] * n_keypoints
        extra = {}
        if kfa_k:
            extra = dict(
                kfa_w1=rng.normal(0, np.sqrt(2.0 / kfa_k), (kfa_k, kfa_hidden)),
                kfa_b1=np.zeros(kfa_hidden),
                kfa_w2=rng.normal(0, np.sqrt(2.0 / kfa_hidden), (kfa_hidden, kfa_dim)),
                kfa_b2=np.zeros(kfa_dim),
            )
        return cls(
            layers=layers,
            head_w1=rng.normal(0, np.sqrt(2.0 / fan), (fan, hidden)),
            head_b1=np.zeros(hidden),
            head_w2=rng.normal(0, head_scale / np.sqrt(hidden), (hidden, 9)),
            head_b2=np.concatenate([IDENTITY_6D, np.zeros(3)]),
            n_keypoints=n_keypoints,
            k=k,
            dynamic=dynamic,
            bandwidth_mode=bandwidth_mode,
            **extra,
        )

    def parameters(self) -> dict:
        """Name -> array (the live arrays, in a fixed order)."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.alpha"] = layer.alpha
            params[f"layer{i}.beta"] = layer.beta
        params.update(head_w1=self.head_w1, head_b1=self.head_b1, head_w2=self.head_w2, head_b2=self.head_b2)
        if self.uses_kfa:
            params.update(kfa_w1=self.kfa_w1, kfa_b1=self.kfa_b1, kfa_w2=self.kfa_w2, kfa_b2=self.kfa_b2)
        return params

    def set_parameter(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name.startswith("layer"):
            idx, attr = name[5:].split(".")
            layer = self.layers[int(idx)]
            if getattr(layer, attr).shape != value.shape:
                raise DimensionMismatch(f"shape mismatch for {name}")
            setattr(layer, attr, value)
        else:
            if getattr(self, name).shape != value.shape:
                raise DimensionMismatch(f"shape mismatch for {name}")
            setattr(self, name, value)
        self.version += 1

    def copy(self) -> "DgPnpModel":
        return copy.deepcopy(self)

    def input_arrays(self, corrs_list):
        """Stack per-sample (n, m, 6) features and optional KFA inputs."""
        X = np.stack([vertex_features(c, self.fallback_depth) for c in corrs_list])
        kfa = None
        if self.uses_kfa:
            k = self.kfa_w1.shape[0]
            kfa = np.stack([
                c.kfa if c.kfa is not None else np.zeros(c.pixels.shape[:2] + (k,)) for c in corrs_list
            ])
            if kfa.shape[-1] != k:
                raise DimensionMismatch(f"KFA inputs have {kfa.shape[-1]} values, model expects {k}")
        if X.shape[1] != self.n_keypoints:
            raise DimensionMismatch(f"model expects {self.n_keypoints} keypoints, got {X.shape[1]}")
        return X, kfa


@dataclass
class ForwardResult:
    rotation: Tensor  # (B, 3, 3), columns b1, b2, b3
    translation: Tensor  # (B, 3)
    graphs: list  # per layer: (neighbors, weights), each (B*n, m, k)
    params: dict  # name -> leaf Tensor
    pooled: Tensor


def _decode_rotation(y6: Tensor) -> Tensor:
    B = y6.shape[0]
    a1, a2 = y6[:, 0:3], y6[:, 3:6]
    b1 = a1 / a1.norm(-1).reshape(B, 1)
    proj = (b1 * a2).sum(axis=1, keepdims=True)
    u = a2 - proj * b1
    b2 = u / u.norm(-1).reshape(B, 1)
    b3 = ag.cross(b1, b2)
    return ag.stack([b1, b2, b3], axis=2)


def forward_arrays(model: DgPnpModel, X: np.ndarray, kfa: np.ndarray | None = None,
                   graphs: list | None = None) -> ForwardResult:
    """Differentiable forward pass on (B, n, m, 6) inputs.

    ``graphs`` (as returned in a previous result) freezes the topology and
    edge weights instead of recomputing them.
    """
    B, n, m, d = X.shape
    if d != FEATURE_DIM:
        raise DimensionMismatch(f"vertex features must have {FEATURE_DIM} components, got {d}")
    params = {name: Tensor(val, requires_grad=True, name=name) for name, val in model.parameters().items()}
    # fixed standardization of the raw features, fitted once from training data
    feats = Tensor(((X - model.input_shift) / model.input_scale).reshape(B * n, m, d))
    if model.uses_kfa:
        kin = Tensor(kfa.reshape(B * n, m, -1))
        h = (kin @ params["kfa_w1"] + params["kfa_b1"]).relu()
        feats = ag.concat([feats, (h @ params["kfa_w2"] + params["kfa_b2"]).relu()], axis=-1)
    if feats.shape[-1] != model.layers[0].in_dim:
        raise DimensionMismatch(f"feature dim {feats.shape[-1]} != first layer input {model.layers[0].in_dim}")

    used = []
    for i in range(len(model.layers)):
        if graphs is not None:
            nbr, w = graphs[i]
        elif i == 0 or model.dynamic:
            nbr, w = build_graphs(feats.data, model.k, model.bandwidth_mode)
        else:
            nbr, w = used[0]
        used.append((nbr, w))
        feats = _edge_conv_tensor(params[f"layer{i}.alpha"], params[f"layer{i}.beta"], feats, nbr, w)
    # edge-conv outputs are sums of ReLUs, so a ReLU between layers is already implied
    pooled = feats.max(axis=1)
    z = pooled.reshape(B, -1)
    hidden = (z @ params["head_w1"] + params["head_b1"]).relu()
    y = hidden @ params["head_w2"] + params["head_b2"]
    R = _decode_rotation(y[:, 0:6])
    return ForwardResult(R, y[:, 6:9], used, params, pooled)


def _check_decodable(y6: np.ndarray):
    a1, a2 = y6[:, 0:3], y6[:, 3:6]
    n1 = np.linalg.norm(a1, axis=1)
    if np.any(n1 <= 1e-12) or np.any(np.linalg.norm(np.cross(a1, a2), axis=1) <= 1e-6 * n1 * np.linalg.norm(a2, axis=1)):
        from .errors import DegenerateInput

        raise DegenerateInput("network produced a degenerate 6D rotation code")


def predict_poses(model: DgPnpModel, corrs_list, check: bool = True, chunk: int = 64) -> list:
    """Pose per CorrespondenceSet, evaluated ``chunk`` samples at a time."""
    corrs_list = list(corrs_list)
    poses = []
    for start in range(0, len(corrs_list), chunk):
        X, kfa = model.input_arrays(corrs_list[start : start + chunk])
        res = forward_arrays(model, X, kfa)
        for R, t in zip(res.rotation.data, res.translation.data):
            if check and not is_rotation(R, 1e-9):
                raise ValidationError("decoded rotation is not orthonormal")
            poses.append(Pose(R, t))
    return poses


def forward(model: DgPnpModel, corrs) -> Pose:
    """Pose estimate for one CorrespondenceSet."""
    return predict_poses(model, [corrs])[0]


# ---------------------------------------------------------------- losses

def pose_loss_tensor(R: Tensor, t: Tensor, keypoints: np.ndarray, gt_R: np.ndarray, gt_t: np.ndarray) -> Tensor:
    """Batch mean of the per-sample mean keypoint distance.

    ``keypoints`` (B, n, 3) or (n, 3); ``gt_R`` (B, 3, 3); ``gt_t`` (B, 3).
    """
    B = R.shape[0]
    P = np.broadcast_to(np.asarray(keypoints, dtype=np.float64), (B,) + np.shape(keypoints)[-2:])
    est = R[:, None, :, 0] * P[..., 0:1] + R[:, None, :, 1] * P[..., 1:2] + R[:, None, :, 2] * P[..., 2:3]
    est = est + t.reshape(B, 1, 3)
    gt = np.einsum("bij,bnj->bni", gt_R, P) + gt_t[:, None, :]
    return (est - gt).norm(-1).mean()


@dataclass(frozen=True)
class LossWeights:
    """Weights of the depth, segmentation, keypoint and pose terms."""

    depth: float = 1.0
    segmentation: float = 1.0
    keypoint: float = 0.0
    pose: float = 1.0

    def __post_init__(self):
        if min(self.depth, self.segmentation, self.keypoint, self.pose) < 0:
            raise ValidationError("loss weights must be non-negative")

    def as_tuple(self):
        return (self.depth, self.segmentation, self.keypoint, self.pose)


@dataclass
class LossRecord:
    tape: Tape
    loss: Tensor
    result: ForwardResult
    fingerprint: str
    version: int
    components: dict


def _fingerprint(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def record_loss(model: DgPnpModel, X: np.ndarray, kfa, keypoints, gt_R, gt_t,
                weights: LossWeights = LossWeights(), keypoint_loss: float = 0.0,
                graphs: list | None = None, scale: float = 1.0) -> LossRecord:
    """Forward pass plus weighted loss, recorded on a fresh tape.

    The keypoint term is passed in as a constant: correspondences are inputs
    here, so it carries no gradient.
    """
    tape = Tape()
    with tape:
        res = forward_arrays(model, X, kfa, graphs)
        lp = pose_loss_tensor(res.rotation, res.translation, keypoints, gt_R, gt_t)
        total = lp * (weights.pose * scale) + weights.keypoint * keypoint_loss * scale
    tape.meta["fingerprint"] = _fingerprint(X, kfa, keypoints, gt_R, gt_t)
    comps = {"pose": float(lp.data), "keypoint": float(keypoint_loss)}
    return LossRecord(tape, total, res, tape.meta["fingerprint"], model.version, comps)


def backward(model: DgPnpModel, X: np.ndarray, kfa, keypoints, gt_R, gt_t, record: LossRecord) -> dict:
    """Gradients of the recorded loss w.r.t. every parameter, by name.

    Raises :class:`TapeMismatch` if the inputs or the model parameters differ
    from the ones the tape was recorded with.
    """
    if record.version != model.version:
        raise TapeMismatch("model parameters changed since the forward pass was recorded")
    if _fingerprint(X, kfa, keypoints, gt_R, gt_t) != record.fingerprint:
        raise TapeMismatch("inputs differ from the recorded forward pass")
    for t in record.result.params.values():
        t.grad = None
    record.tape.backward(record.loss)
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in record.result.params.items()}


# ---------------------------------------------------------------- training

class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValidationError("learning rate must be >= 0")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, model: DgPnpModel, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in model.parameters().items():
            g = grads[name]
            m = self.m.get(name, 0.0) * self.b1 + (1.0 - self.b1) * g
            v = self.v.get(name, 0.0) * self.b2 + (1.0 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        model.version += 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    rng_seed: int = 0
    weights: LossWeights = LossWeights()
    init_from_data: bool = True
    max_steps: int | None = None
    lr_decay: float = 1.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if isinstance(self.weights, (tuple, list)):
            object.__setattr__(self, "weights", LossWeights(*self.weights))


@dataclass
class TrainingSet:
    """Precomputed network inputs and targets for a list of samples."""

    X: np.ndarray
    kfa: np.ndarray | None
    keypoints: np.ndarray
    gt_R: np.ndarray
    gt_t: np.ndarray
    keypoint_loss: np.ndarray

    @classmethod
    def from_samples(cls, model: DgPnpModel, samples) -> "TrainingSet":
        if not samples:
            raise ValidationError("dataset is empty")
        corrs = [s.correspondences for s in samples]
        X, kfa = model.input_arrays(corrs)
        kps = np.stack([c.keypoints.points for c in corrs])
        gt_R = np.stack([s.gt_pose.rotation for s in samples])
        gt_t = np.stack([s.gt_pose.translation for s in samples])
        lk = np.array([_keypoint_loss(s) for s in samples])
        return cls(X, kfa, kps, gt_R, gt_t, lk)

    def __len__(self):
        return len(self.X)

    def batch(self, idx):
        return (self.X[idx], None if self.kfa is None else self.kfa[idx], self.keypoints[idx],
                self.gt_R[idx], self.gt_t[idx], float(np.mean(self.keypoint_loss[idx])))


def _keypoint_loss(sample) -> float:
    c = sample.correspondences
    from .geometry import project

    gt_px = project(c.intrinsics, sample.gt_pose.apply(c.keypoints.points))
    return loss_keypoint(c, gt_px)


def train(model: DgPnpModel, dataset, config: TrainConfig = TrainConfig(), progress=None):
    """Mini-batch Adam on the weighted loss.

    ``dataset`` is a list of SyntheticSample or a :class:`TrainingSet`.
    Returns ``(model, history)`` where history holds one mean loss per epoch;
    the model is updated in place. Deterministic for a fixed ``rng_seed``.
    """
    data = dataset if isinstance(dataset, TrainingSet) else TrainingSet.from_samples(model, dataset)
    if len(data) == 0:
        raise ValidationError("dataset is empty")
    if config.init_from_data:
        flat = data.X.reshape(-1, data.X.shape[-1])
        model.input_shift = flat.mean(axis=0)
        model.input_scale = np.maximum(flat.std(axis=0), 1e-6)
        model.head_b2[6:9] = data.gt_t.mean(axis=0)
        model.version += 1
    opt = Adam(config.learning_rate)
    rng = np.random.default_rng(config.rng_seed)
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        losses, sizes = [], []
        for start in range(0, len(data), config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            batch = data.batch(idx)
            rec = record_loss(model, *batch[:5], weights=config.weights, keypoint_loss=batch[5])
            value = float(rec.loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"non-finite loss {value} at epoch {epoch}, step {step}")
            grads = backward(model, *batch[:5], rec)
            bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                raise NonFiniteLoss(f"non-finite gradient in {bad} at epoch {epoch}, step {step}")
            opt.step(model, grads)
            losses.append(value)
            sizes.append(len(idx))
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                break
        history.append(float(np.average(losses, weights=sizes)))
        if progress is not None:
            progress(epoch, history[-1])
        log.debug("epoch %d loss %.6f", epoch, history[-1])
        opt.lr *= config.lr_decay
        if config.max_steps is not None and step >= config.max_steps:
            break
    return model, history
