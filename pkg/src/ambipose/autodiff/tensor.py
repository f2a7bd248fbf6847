"""Minimal reverse-mode autodiff over numpy arrays.

A :class:`Tensor` records the op that produced it and a closure that pushes
its gradient to its inputs. ``backward`` walks the graph in reverse
topological order. Only the ops the pose model needs are provided.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteValue, ShapeMismatch


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"non-finite value produced by {op}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), op="leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self.op = op

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def _wrap(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def _make(self, data, parents, op, backward):
        _check_finite(data, op)
        out = Tensor(data, _parents=parents, op=op)
        if out.requires_grad:
            out._backward = backward
        return out

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._make(a.data + b.data, (a, b), "add", backward)

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return self._make(a.data - b.data, (a, b), "sub", backward)

    def __rsub__(self, other):
        return self._wrap(other) - self

    def __mul__(self, other):
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return self._make(a.data * b.data, (a, b), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; use normalize")
        return self * (1.0 / other)

    def __matmul__(self, other):
        other = self._wrap(other)
        a, b = self, other
        if a.shape[-1] != b.shape[0] or b.ndim != 2:
            raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")

        def backward(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return self._make(a.data @ b.data, (a, b), "matmul", backward)

    # ------------------------------------------------------------- elementwise
    def relu(self):
        mask = self.data > 0
        return self._make(self.data * mask, (self,), "relu", lambda g: (g * mask,))

    def exp(self):
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return self._make(out, (self,), "exp", lambda g: (g * out,))

    def log(self):
        x = self.data
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(x)
        return self._make(out, (self,), "log", lambda g: (g / x,))

    def square(self):
        x = self.data
        return self._make(x * x, (self,), "square", lambda g: (2.0 * g * x,))

    def clamp(self, lo=None, hi=None):
        x = self.data
        out = np.clip(x, lo, hi)
        mask = np.ones(x.shape, dtype=bool)
        if lo is not None:
            mask &= x >= lo
        if hi is not None:
            mask &= x <= hi
        return self._make(out, (self,), "clamp", lambda g: (g * mask,))

    # --------------------------------------------------------------- reduction
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def norm(self, axis=-1, keepdims=False):
        """L2 norm along ``axis``; a tuple of two axes gives the Frobenius norm.

        The gradient at an exactly zero vector is taken as zero.
        """
        x = self.data
        out = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            safe = np.where(out > 0, out, 1.0)
            return (g * np.where(out > 0, x / safe, 0.0),)

        value = out if keepdims else np.squeeze(out, axis=axis)
        return self._make(value, (self,), "norm", backward)

    # --------------------------------------------------------- vector algebra
    def normalize(self, axis=-1):
        """``x / |x|`` along ``axis``."""
        x = self.data
        n = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
        u = x / n

        def backward(g):
            return ((g - u * np.sum(g * u, axis=axis, keepdims=True)) / n,)

        return self._make(u, (self,), "normalize", backward)

    def cross(self, other):
        """Cross product along the last axis (length 3)."""
        other = self._wrap(other)
        a, b = self, other

        def backward(g):
            # d(a x b) . g = a . (b x g) = b . (g x a)
            return (
                _unbroadcast(np.cross(b.data, g), a.shape),
                _unbroadcast(np.cross(g, a.data), b.shape),
            )

        return self._make(np.cross(a.data, b.data), (a, b), "cross", backward)

    # ------------------------------------------------------------------ shapes
    def __getitem__(self, idx):
        shape, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if _has_advanced(idx):
                np.add.at(full, idx, g)
            else:
                full[idx] += g
            return (full,)

        return self._make(self.data[idx], (self,), "getitem", backward)

    def reshape(self, *shape):
        old = self.shape
        return self._make(
            self.data.reshape(*shape), (self,), "reshape", lambda g: (g.reshape(old),)
        )

    # ---------------------------------------------------------------- backprop
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return self


def _has_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return tensors[0]._make(data, tuple(tensors), "concat", backward)
