"""Experiment configuration: a JSON document with these sections.

.. code-block:: json

    {
      "seed": 0,
      "output_dir": "out",
      "dataset": {"n_train": 20000, "n_test": 2000, "sphere_radius": 0.1,
                  "sphere_points": 1000, "num_keypoints": 8, "hypotheses": 10,
                  "z_range": [1.0, 2.0], "sigma_range": [0.0, 15.0],
                  "outlier_range": [0.1, 0.3], "depth_noise_std": 0.0,
                  "drn_tau": 0.05, "kfa_k": 0},
      "sweep": {"sigmas": [0, 5, 10, 15], "outlier_rates": [0.1, 0.3], "samples": 500},
      "solvers": ["epnp", "dgpnp"],
      "model": {"k": 8, "dims": [6, 64, 64, 128], "hidden": 256, "dynamic": true,
                "bandwidth_mode": "gaussian", "kfa_dim": 16, "kfa_hidden": 32},
      "train": {"learning_rate": 0.001, "batch_size": 32, "epochs": 30,
                "lr_decay": 1.0, "loss_weights": [1, 1, 0, 1]},
      "ransac": {"max_iterations": 200, "inlier_threshold": 3.0, "confidence": 0.999}
    }

Every section and key is optional; unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidRate, InvalidSigma, IoError, ValidationError
from .synth import SynthConfig

SOLVERS = ("epnp", "ransac", "dgpnp")
SIGMA_MAX = 15.0


@dataclass(frozen=True)
class SweepConfig:
    sigmas: tuple = (0.0, 5.0, 10.0, 15.0)
    outlier_rates: tuple = (0.1, 0.3)
    samples: int = 500

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        rates = tuple(float(r) for r in self.outlier_rates)
        if not sig or not rates:
            raise ValidationError("sweep needs at least one sigma and one outlier rate")
        for s in sig:
            if not 0.0 <= s <= SIGMA_MAX:
                raise InvalidSigma(f"sigma {s:g} outside the allowed range [0, 15]")
        for r in rates:
            if not 0.0 <= r < 1.0:
                raise InvalidRate(f"outlier rate {r:g} outside the allowed range [0, 1)")
        if len(set(sig)) != len(sig) or len(set(rates)) != len(rates):
            raise ValidationError("sweep values must be distinct")
        if self.samples < 1:
            raise ValidationError("sweep.samples must be >= 1")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "outlier_rates", rates)


@dataclass(frozen=True)
class ModelConfig:
    k: int = 8
    dims: tuple = (6, 64, 64, 128)
    hidden: int = 256
    dynamic: bool = True
    bandwidth_mode: str = "gaussian"
    kfa_dim: int = 16
    kfa_hidden: int = 32

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValidationError("model.dims needs at least two positive sizes")
        if self.k < 1 or self.hidden < 1:
            raise ValidationError("model.k and model.hidden must be >= 1")
        if self.bandwidth_mode not in ("gaussian", "uniform"):
            raise ValidationError(f"unknown bandwidth_mode {self.bandwidth_mode!r}")
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    lr_decay: float = 1.0
    loss_weights: tuple = (1.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        w = tuple(float(x) for x in self.loss_weights)
        if len(w) != 4 or min(w) < 0:
            raise ValidationError("train.loss_weights must be four non-negative numbers")
        if not self.learning_rate > 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("train needs learning_rate > 0, batch_size >= 1, epochs >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ValidationError("train.lr_decay must lie in (0, 1]")
        object.__setattr__(self, "loss_weights", w)


@dataclass(frozen=True)
class RansacSection:
    max_iterations: int = 200
    inlier_threshold: float = 3.0
    confidence: float = 0.999


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    dataset: SynthConfig = field(default_factory=SynthConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    solvers: tuple = ("epnp", "dgpnp")
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    ransac: RansacSection = field(default_factory=RansacSection)

    def __post_init__(self):
        solvers = tuple(self.solvers)
        if not solvers:
            raise ValidationError("solver list must not be empty")
        bad = [s for s in solvers if s not in SOLVERS]
        if bad:
            raise ValidationError(f"unknown solver(s) {bad}; choose from {list(SOLVERS)}")
        if len(set(solvers)) != len(solvers):
            raise ValidationError("duplicate solver names")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an integer in [0, 2**64)")
        object.__setattr__(self, "solvers", solvers)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, seed=None, output_dir=None, solvers=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        if solvers:
            changes["solvers"] = tuple(solvers)
        return replace(self, **changes) if changes else self

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        sections = {"dataset": SynthConfig, "sweep": SweepConfig, "model": ModelConfig,
                    "train": TrainSection, "ransac": RansacSection}
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value, key)
            elif key in ("seed", "output_dir", "solvers"):
                kwargs[key] = tuple(value) if key == "solvers" else value
            else:
                raise ValidationError(f"unknown config key {key!r}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, value, section: str):
    if not isinstance(value, dict):
        raise ValidationError(f"config section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ValidationError(f"unknown key(s) {unknown} in section {section!r}")
    args = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return cls(**args)
    except TypeError as exc:
        raise ValidationError(f"section {section!r}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        from .errors import ParseError

        raise ParseError(f"invalid JSON in {path}: {exc.msg}", exc.lineno) from exc
    return ExperimentConfig.from_dict(data)


def save_config(path, config: ExperimentConfig) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write config {path}: {exc.strerror or exc}") from exc
