"""Named parameter storage, gradient evaluation and the AdamW optimizer."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteValue, ShapeMismatch
from .tensor import Tensor


class ParamStore:
    """Ordered mapping ``name -> ndarray`` plus per-parameter AdamW state.

    Iteration order is insertion order and is what checkpoints, gradient
    checks and the optimizer all rely on. A parameter whose ``decay`` flag
    is off (biases) is skipped by the decoupled weight decay.
    """

    def __init__(self):
        self._values = OrderedDict()
        self._decay = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, value, decay=None):
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value)
        self._values[name] = value
        self._decay[name] = value.ndim >= 2 if decay is None else bool(decay)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        old = self._values[name]
        value = np.asarray(value, dtype=old.dtype)
        if value.shape != old.shape:
            raise ShapeMismatch(f"{name}: expected shape {old.shape}, got {value.shape}")
        self._values[name] = value

    def __contains__(self, name):
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def decays(self, name):
        return self._decay[name]

    @property
    def dtype(self):
        return next(iter(self._values.values())).dtype

    def shapes(self):
        return OrderedDict((k, tuple(v.shape)) for k, v in self._values.items())

    def copy(self):
        out = ParamStore()
        for k, v in self._values.items():
            out.add(k, v.copy(), decay=self._decay[k])
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step = self.step
        return out

    def astype(self, dtype):
        """Copy with every tensor (and optimizer moment) cast to ``dtype``."""
        out = ParamStore()
        for k, v in self._values.items():
            out.add(k, v.astype(dtype), decay=self._decay[k])
            out.m[k] = self.m[k].astype(dtype)
            out.v[k] = self.v[k].astype(dtype)
        out.step = self.step
        return out

    def leaves(self):
        """Fresh gradient-tracking tensors over the current values."""
        return OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in self._values.items())

    def constants(self):
        return OrderedDict((k, Tensor(v)) for k, v in self._values.items())


def value_and_grad(computation, params: ParamStore, *inputs):
    """Evaluate ``computation(leaves, *inputs)`` and backpropagate.

    ``computation`` receives a dict of tensors keyed like ``params`` and must
    return a scalar :class:`Tensor`. Parameters the loss does not touch get
    zero gradients.
    """
    leaves = params.leaves()
    loss = computation(leaves, *inputs)
    if loss.data.size != 1:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
    loss.backward()
    grads = OrderedDict()
    for k, leaf in leaves.items():
        grads[k] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return float(loss.data), grads


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr > 0 and self.eps > 0 and self.weight_decay >= 0):
            raise ValueError(f"invalid optimizer config {self}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"moment decay rates must lie in [0, 1): {self}")


def adamw_step(params: ParamStore, grads, config: OptimizerConfig):
    """One in-place AdamW update; returns ``params``.

    Bias-corrected Adam step first, then ``theta -= lr * wd * theta`` on
    parameters flagged for decay.
    """
    for k in params:
        if not np.isfinite(grads[k]).all():
            raise NonFiniteValue(f"non-finite gradient for {k}")
    params.step += 1
    t = params.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k in params:
        g = np.asarray(grads[k], dtype=params[k].dtype)
        m = params.m[k] = b1 * params.m[k] + (1.0 - b1) * g
        v = params.v[k] = b2 * params.v[k] + (1.0 - b2) * (g * g)
        theta = params[k] - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        if config.weight_decay and params.decays(k):
            theta = theta - config.lr * config.weight_decay * theta
        params[k] = theta
    return params
