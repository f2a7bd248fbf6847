"""Fully connected layers on top of :mod:`tensor`."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


def init_linear(params, name, fan_in, fan_out, rng, dtype=np.float32):
    """Add ``name.weight`` (fan_in x fan_out) and ``name.bias`` to ``params``.

    Weights are Glorot-uniform, biases zero.
    """
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    params.add(f"{name}.weight", rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
    params.add(f"{name}.bias", np.zeros(fan_out, dtype=dtype))


def init_mlp(params, prefix, widths, rng, dtype=np.float32):
    """Layers ``prefix.0 .. prefix.{n-1}`` mapping ``widths[i] -> widths[i+1]``."""
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        init_linear(params, f"{prefix}.{i}", a, b, rng, dtype)


def layer_names(params, prefix):
    """Layer prefixes ``prefix.0, prefix.1, ...`` present in ``params``, in order."""
    names = []
    i = 0
    while f"{prefix}.{i}.weight" in params:
        names.append(f"{prefix}.{i}")
        i += 1
    return names


def linear(tensors, name, x):
    W = tensors[f"{name}.weight"]
    b = tensors[f"{name}.bias"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"{name}: input width {x.shape[-1]} != {W.shape[0]}")
    return x @ W + b


def mlp_forward(tensors, layers, x, final_relu=False):
    """Affine + ReLU for each layer in ``layers``; the last one stays affine.

    ``tensors`` maps parameter names to :class:`Tensor` (or arrays);
    ``layers`` lists the layer prefixes in order.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    for i, name in enumerate(layers):
        x = linear(tensors, name, x)
        if i < len(layers) - 1 or final_relu:
            x = x.relu()
    return x
