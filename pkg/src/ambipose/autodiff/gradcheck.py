"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .params import ParamStore, value_and_grad


def numeric_grad(computation, params: ParamStore, *inputs, step=1e-5):
    """Central differences of ``computation`` w.r.t. every parameter entry."""
    out = {}
    for name in params:
        base = params[name]
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + step
            f_plus = float(computation(params.constants(), *inputs).data)
            base[idx] = orig - step
            f_minus = float(computation(params.constants(), *inputs).data)
            base[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * step)
        out[name] = g
    return out


def relative_errors(analytic, numeric, floor=1e-8):
    """Per-entry ``|a - n| / max(|a|, |n|, floor)`` for each parameter."""
    errs = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        errs[name] = np.abs(a - n) / denom
    return errs


def finite_difference_check(computation, params: ParamStore, *inputs, step=1e-5, analytic=None):
    """Largest relative error between analytic and central-difference gradients.

    ``computation`` must be deterministic: any randomness (latent noise) is
    passed through ``inputs``. When ``analytic`` is omitted it is computed with
    :func:`value_and_grad`. The parameter arrays are perturbed in place and
    restored afterwards.
    """
    if analytic is None:
        _, analytic = value_and_grad(computation, params, *inputs)
    numeric = numeric_grad(computation, params, *inputs, step=step)
    errs = relative_errors(analytic, numeric)
    return max((float(e.max()) for e in errs.values() if e.size), default=0.0)
