"""Run configuration: one flat set of keys covering scene, training,
evaluation and seeds, loadable from a flat JSON object."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

from .autodiff import OptimizerConfig
from .cvae import ModelSpec, TrainConfig
from .errors import ParseError
from .evaluate import TABLE_THRESHOLDS, RecallSpec

OUTPUT_ENV = "AMBIPOSE_OUTPUT"


@dataclass
class RunConfig:
    # scene
    pattern: tuple = ("red", "green", "red")
    length: float = 3.0
    segment_yaw: tuple = None
    n_features: int = 3
    sigma_obs: float = 0.01
    n_train: int = 300
    n_test: int = 60
    # model
    latent_dim: int = 4
    feature_widths: tuple = (32,)
    fusion_width: int = 64
    hidden_width: int = 128
    encoder_depth: int = 5
    decoder_depth: int = 5
    # training
    iterations: int = 20000
    batch_size: int = 16
    mc_samples: int = 64
    beta: float = 0.3
    warmup_start: int = 1000
    warmup_length: int = 4000
    lambda_r: float = 4.0
    lambda_t: float = 4.0
    lr: float = 1e-4
    weight_decay: float = 1e-3
    # evaluation
    samples: int = 1000
    gamma: float = 0.05
    gamma_mode: float = 0.05
    thresholds: tuple = TABLE_THRESHOLDS
    # seeds
    scene_seed: int = 0
    data_seed: int = 1
    init_seed: int = 0
    train_seed: int = 0
    eval_seed: int = 0
    output_dir: str = None

    def __post_init__(self):
        self.pattern = tuple(self.pattern)
        self.feature_widths = tuple(int(w) for w in self.feature_widths)
        self.thresholds = tuple((float(a), float(b)) for a, b in self.thresholds)
        if self.segment_yaw is not None:
            self.segment_yaw = tuple(float(a) for a in self.segment_yaw)
        if self.output_dir is None:
            self.output_dir = os.environ.get(OUTPUT_ENV, "runs")
        for name in ("n_features", "n_train", "n_test", "samples"):
            if getattr(self, name) < 1:
                raise ParseError(f"{name} must be positive")
        try:
            self.train_config()
            self.recall_spec()
            self.model_spec()
        except ValueError as exc:
            raise ParseError(str(exc)) from None

    def model_spec(self):
        return ModelSpec(
            obs_dim=self.n_features,
            latent_dim=self.latent_dim,
            feature_widths=self.feature_widths,
            fusion_width=self.fusion_width,
            hidden_width=self.hidden_width,
            encoder_depth=self.encoder_depth,
            decoder_depth=self.decoder_depth,
        )

    def train_config(self):
        return TrainConfig(
            latent_dim=self.latent_dim,
            beta=self.beta,
            warmup_start=self.warmup_start,
            warmup_length=self.warmup_length,
            batch_size=self.batch_size,
            mc_samples=self.mc_samples,
            lambda_r=self.lambda_r,
            lambda_t=self.lambda_t,
            iterations=self.iterations,
            seed=self.train_seed,
            optimizer=OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay),
        )

    def recall_spec(self):
        return RecallSpec(thresholds=self.thresholds, gamma=self.gamma)

    def seeds(self):
        return {k: getattr(self, k) for k in ("scene_seed", "data_seed", "init_seed", "train_seed", "eval_seed")}

    def to_dict(self):
        d = asdict(self)
        d.pop("output_dir")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ParseError(f"unknown config keys: {unknown}")
        kw = {}
        for k, v in d.items():
            default = known[k].default
            try:
                kw[k] = _coerce(v, default)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"config key {k}: {exc}") from None
        return cls(**kw)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise ParseError(f"{path}: expected a flat JSON object")
        return cls.from_dict(d)


def _coerce(value, default):
    if value is None or default is None or isinstance(default, tuple):
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ValueError(f"{value!r} is not an integer")
        return int(float(value))
    return type(default)(value)
