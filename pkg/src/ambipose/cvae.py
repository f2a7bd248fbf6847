"""Conditional VAE over camera poses.

The encoder maps a 9-vector pose (6D rotation + translation) to a diagonal
Gaussian over a small latent space. The decoder (the pose generative model)
maps a latent sample and an observation to a 9-vector pose. Training
minimizes a beta-weighted KL term plus the Monte Carlo average of a
rotation/translation reconstruction distance; sampling feeds standard normal
latents through the decoder.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    OptimizerConfig,
    ParamStore,
    Tensor,
    adamw_step,
    concat,
    init_linear,
    layer_names,
    linear,
    mlp_forward,
    value_and_grad,
)
from .errors import DegenerateRotation6D, ExcessiveDegeneracy, NonFiniteValue, ShapeMismatch
from .geometry import EPS_6D, Pose, matrix_to_rot6d, rot6d_is_degenerate, rot6d_to_matrix

log = logging.getLogger(__name__)

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass(frozen=True)
class ModelSpec:
    """Layer widths of the encoder, the decoder and the observation extractor.

    ``feature_widths`` lists the hidden widths of the observation feature
    extractor (each layer followed by ReLU); an empty tuple feeds the raw
    observation to the fusion projection.
    """

    obs_dim: int = 3
    latent_dim: int = 4
    feature_widths: tuple = (32,)
    fusion_width: int = 64
    hidden_width: int = 128
    encoder_depth: int = 5
    decoder_depth: int = 5

    def __post_init__(self):
        object.__setattr__(self, "feature_widths", tuple(int(w) for w in self.feature_widths))
        for name in ("obs_dim", "latent_dim", "fusion_width", "hidden_width", "encoder_depth", "decoder_depth"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def feature_dim(self):
        return self.feature_widths[-1] if self.feature_widths else self.obs_dim

    def layer_shapes(self):
        shapes = {}
        widths = (self.obs_dim,) + self.feature_widths
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"features.{i}"] = (a, b)
        shapes["obs_proj"] = (self.feature_dim, self.fusion_width)
        shapes["latent_proj"] = (self.latent_dim, self.fusion_width)
        trunk = [self.fusion_width] + [self.hidden_width] * self.decoder_depth + [9]
        for i, (a, b) in enumerate(zip(trunk[:-1], trunk[1:])):
            shapes[f"decoder.{i}"] = (a, b)
        enc = [9] + [self.hidden_width] * self.encoder_depth + [2 * self.latent_dim]
        for i, (a, b) in enumerate(zip(enc[:-1], enc[1:])):
            shapes[f"encoder.{i}"] = (a, b)
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 4
    beta: float = 0.3
    warmup_start: int = 1000
    warmup_length: int = 4000
    batch_size: int = 16
    mc_samples: int = 64
    lambda_r: float = 1.0
    lambda_t: float = 1.0
    iterations: int = 8000
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            object.__setattr__(self, "optimizer", OptimizerConfig(**self.optimizer))
        for name in ("latent_dim", "batch_size", "mc_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.warmup_start < 0 or self.warmup_length < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not (self.lambda_r > 0 and self.lambda_t > 0):
            raise ValueError("loss weights must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LatentGaussian:
    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=np.float64)
        lv = np.clip(np.asarray(self.log_variance, dtype=np.float64), LOGVAR_MIN, LOGVAR_MAX)
        if mu.shape != lv.shape:
            raise ShapeMismatch(f"mean {mu.shape} vs log-variance {lv.shape}")
        if not (np.isfinite(mu).all() and np.isfinite(lv).all()):
            raise NonFiniteValue("latent Gaussian parameters are not finite")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "log_variance", lv)


# --------------------------------------------------------------------- model


def init_params(spec: ModelSpec, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for name, (a, b) in spec.layer_shapes().items():
        init_linear(params, name, a, b, rng, dtype)
    return params


def spec_from_params(params: ParamStore):
    """Recover the :class:`ModelSpec` that produced ``params``."""
    shapes = params.shapes()
    feats = [shapes[f"{n}.weight"][1] for n in layer_names(params, "features")]
    obs_dim = shapes["features.0.weight"][0] if feats else shapes["obs_proj.weight"][0]
    return ModelSpec(
        obs_dim=obs_dim,
        latent_dim=shapes["latent_proj.weight"][0],
        feature_widths=tuple(feats),
        fusion_width=shapes["obs_proj.weight"][1],
        hidden_width=shapes["decoder.0.weight"][1],
        encoder_depth=len(layer_names(params, "encoder")) - 1,
        decoder_depth=len(layer_names(params, "decoder")) - 1,
    )


def _tensors(params):
    return params if isinstance(params, dict) else params.constants()


def encoder_forward(t, y9):
    """Encoder on a ``(..., 9)`` tensor -> (mean, clamped log-variance) tensors."""
    out = mlp_forward(t, layer_names(t, "encoder"), y9)
    d = out.shape[-1] // 2
    return out[..., :d], out[..., d:].clamp(LOGVAR_MIN, LOGVAR_MAX)


def observation_embedding(t, obs):
    """Feature extractor followed by the fusion projection (both with ReLU)."""
    h = obs if isinstance(obs, Tensor) else Tensor(obs)
    feats = layer_names(t, "features")
    if feats:
        h = mlp_forward(t, feats, h, final_relu=True)
    return linear(t, "obs_proj", h).relu()


def decoder_forward(t, z, obs_embedding):
    """Pose 9-vectors from latents ``(..., d)`` and a broadcastable embedding."""
    h = linear(t, "latent_proj", z).relu() + obs_embedding
    return mlp_forward(t, layer_names(t, "decoder"), h)


def kl_terms(mu, logvar):
    """Per-row KL(N(mu, diag(exp(logvar))) || N(0, I)) as a tensor."""
    return (mu.square() + logvar.exp() - 1.0 - logvar).sum(axis=-1) * 0.5


def rot6d_columns(rot6):
    """Gram-Schmidt on a ``(..., 6)`` tensor -> the three column tensors."""
    a1, a2 = rot6[..., 0:3], rot6[..., 3:6]
    n1 = np.linalg.norm(a1.data, axis=-1)
    if np.any(~(n1 > EPS_6D)):
        raise DegenerateRotation6D("first column of 6D rotation has (near-)zero norm")
    b1 = a1.normalize()
    u2 = a2 - (b1 * a2).sum(axis=-1, keepdims=True) * b1
    if np.any(~(np.linalg.norm(u2.data, axis=-1) > EPS_6D)):
        raise DegenerateRotation6D("second column of 6D rotation is (near-)parallel to the first")
    b2 = u2.normalize()
    return b1, b2, b1.cross(b2)


def pose_loss_terms(pred, rot_target, trans_target, lambda_r, lambda_t):
    """Reconstruction distance per row of ``pred`` (..., 9).

    ``rot_target`` is ``(..., 3, 3)`` and ``trans_target`` ``(..., 3)``; both
    broadcast against the leading shape of ``pred``.
    """
    b1, b2, b3 = rot6d_columns(pred[..., 0:6])
    R = np.asarray(rot_target)
    diff = [b1 - R[..., :, 0], b2 - R[..., :, 1], b3 - R[..., :, 2]]
    # |R_hat - R|_F as the norm of the stacked column differences
    frob = concat(diff, axis=-1).norm(axis=-1)
    trans = (pred[..., 6:9] - np.asarray(trans_target)).norm(axis=-1)
    return frob * lambda_r + trans * lambda_t


# ----------------------------------------------------------------- public API


def encode(params, pose_vec9):
    """Latent Gaussian for one pose 9-vector (or a batch ``(N, 9)``)."""
    t = _tensors(params)
    mu, lv = encoder_forward(t, Tensor(np.asarray(pose_vec9, dtype=_dtype(t))))
    return LatentGaussian(mu.data, lv.data)


def kl_standard_normal(q: LatentGaussian):
    """Closed-form KL divergence to the standard normal prior (nats)."""
    mu, lv = q.mean, q.log_variance
    return float(0.5 * np.sum(mu * mu + np.exp(lv) - 1.0 - lv))


def reparameterize(q, noise):
    """``mean + exp(log_variance / 2) * noise``.

    Works on a :class:`LatentGaussian` with numpy noise, or on a
    ``(mean, log_variance)`` pair of tensors when gradients are needed.
    """
    if isinstance(q, LatentGaussian):
        return q.mean + np.exp(0.5 * q.log_variance) * np.asarray(noise, dtype=np.float64)
    mu, lv = q
    return mu + (lv * 0.5).exp() * noise


def decode(params, z, obs_features):
    """Pose 9-vector(s) for latent(s) ``z`` under observation features."""
    t = _tensors(params)
    dt = _dtype(t)
    emb = observation_embedding(t, np.asarray(obs_features, dtype=dt))
    return decoder_forward(t, Tensor(np.asarray(z, dtype=dt)), emb).data


def reconstruction_loss(predicted, target: Pose, lambda_r=1.0, lambda_t=1.0):
    """Weighted Frobenius rotation distance plus Euclidean translation distance."""
    predicted = np.asarray(predicted, dtype=np.float64)
    R_hat = rot6d_to_matrix(predicted[:6])
    return float(
        lambda_r * np.linalg.norm(R_hat - target.rotation)
        + lambda_t * np.linalg.norm(predicted[6:9] - target.translation)
    )


def beta_schedule(iteration, config: TrainConfig):
    """KL weight: zero until ``warmup_start``, then a linear ramp to ``beta``."""
    if iteration < config.warmup_start:
        return 0.0
    if config.warmup_length == 0 or iteration >= config.warmup_start + config.warmup_length:
        return float(config.beta)
    return float(config.beta) * (iteration - config.warmup_start) / config.warmup_length


def elbo_terms(t, obs, rotations, translations, noise, beta, config):
    """Batch objective and its parts, as tensors.

    ``obs`` is ``(B, F)``, ``rotations`` ``(B, 3, 3)``, ``translations``
    ``(B, 3)`` and ``noise`` ``(B, M, d)`` standard normal draws.
    """
    dt = _dtype(t)
    rotations = np.asarray(rotations, dtype=dt)
    translations = np.asarray(translations, dtype=dt)
    y9 = np.concatenate([rotations[:, :, 0], rotations[:, :, 1], translations], axis=-1)
    mu, lv = encoder_forward(t, Tensor(y9))
    kl = kl_terms(mu, lv)
    B = mu.shape[0]
    d = mu.shape[-1]
    z = reparameterize((mu.reshape(B, 1, d), lv.reshape(B, 1, d)), np.asarray(noise, dtype=dt))
    emb = observation_embedding(t, np.asarray(obs, dtype=dt))
    emb = emb.reshape(B, 1, emb.shape[-1])
    pred = decoder_forward(t, z, emb)
    rec = pose_loss_terms(
        pred, rotations[:, None], translations[:, None], config.lambda_r, config.lambda_t
    ).mean(axis=1)
    total = (kl * beta + rec).mean()
    return total, kl, rec


def elbo_loss(params, obs, rotations, translations, iteration, config, noise):
    """Scalar objective for one batch at a given iteration (returns a Tensor)."""
    t = _tensors(params)
    total, _, _ = elbo_terms(
        t, obs, rotations, translations, noise, beta_schedule(iteration, config), config
    )
    return total


def _dtype(t):
    return next(iter(t.values())).dtype


# ------------------------------------------------------------------- training


@dataclass
class TrainLogRow:
    iteration: int
    beta: float
    kl: float
    reconstruction: float
    total: float


def train(data, config: TrainConfig, params: ParamStore, callback=None):
    """Minibatch AdamW on the ELBO objective.

    ``data`` needs ``features`` (N, F), ``rotations`` (N, 3, 3) and
    ``translations`` (N, 3) arrays. ``params`` is updated in place and
    returned with the per-iteration log. Minibatches are drawn from seeded
    reshuffles of the data, so a run is reproducible from ``config.seed``.
    """
    feats = np.asarray(data.features)
    rots = np.asarray(data.rotations)
    trans = np.asarray(data.translations)
    n = len(feats)
    if n == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    d = spec_from_params(params).latent_dim
    if d != config.latent_dim:
        raise ShapeMismatch(f"model latent dim {d} != config latent dim {config.latent_dim}")
    bs = min(config.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    history = []
    for it in range(config.iterations):
        if cursor + bs > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + bs]
        cursor += bs
        noise = rng.standard_normal((bs, config.mc_samples, d)).astype(params.dtype)
        beta = beta_schedule(it, config)
        parts = {}

        def objective(t):
            total, kl, rec = elbo_terms(t, feats[idx], rots[idx], trans[idx], noise, beta, config)
            parts["kl"] = float(kl.data.mean())
            parts["rec"] = float(rec.data.mean())
            return total

        try:
            loss, grads = value_and_grad(objective, params)
            adamw_step(params, grads, config.optimizer)
        except NonFiniteValue as exc:
            raise NonFiniteValue(str(exc), iteration=it) from exc
        row = TrainLogRow(it, beta, parts["kl"], parts["rec"], loss)
        history.append(row)
        if callback is not None:
            callback(row)
    return params, history


# ------------------------------------------------------------------- sampling


def draw_samples(params, obs_features, M, seed, max_degenerate_fraction=0.01):
    """``M`` posterior samples as arrays ``(rotations (M,3,3), translations (M,3))``.

    Latents are drawn from a generator seeded with ``seed``. Decoder outputs
    whose 6D rotation cannot be orthonormalized are replaced by fresh draws;
    more than ``max_degenerate_fraction * M`` such draws raises
    ExcessiveDegeneracy. Returns the arrays and the number of resampled draws.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    t = _tensors(params)
    dt = _dtype(t)
    d = t["latent_proj.weight"].shape[0]
    rng = np.random.default_rng(seed)
    emb = observation_embedding(t, np.asarray(obs_features, dtype=dt).reshape(1, -1))
    budget = math.floor(max_degenerate_fraction * M)
    out = np.empty((0, 9))
    n_bad = 0
    need = M
    while need > 0:
        z = rng.standard_normal((need, d)).astype(dt)
        vec = decoder_forward(t, Tensor(z), emb).data.astype(np.float64)
        bad = rot6d_is_degenerate(vec[:, :6])
        n_bad += int(bad.sum())
        if n_bad > budget:
            raise ExcessiveDegeneracy(
                f"{n_bad} of {M} latent draws decoded to degenerate rotations"
            )
        out = np.concatenate([out, vec[~bad]])
        need = M - len(out)
    if n_bad:
        log.warning("resampled %d degenerate decoder outputs", n_bad)
    return rot6d_to_matrix(out[:, :6]), out[:, 6:9].copy(), n_bad


def sample_posterior(params, obs_features, M, seed):
    """List of ``M`` :class:`Pose` samples from the decoder's posterior."""
    R, tr, _ = draw_samples(params, obs_features, M, seed)
    return [Pose(R[i], tr[i]) for i in range(M)]


def pose_vec9(pose: Pose):
    return np.concatenate([matrix_to_rot6d(pose.rotation), pose.translation])
