"""Reverse-mode differentiation over numpy arrays.

Every primitive returns a new :class:`Tensor`. When at least one input
requires a gradient the result remembers its parents and a closure that
pushes the incoming gradient back to them; :meth:`Tensor.backward` orders
those records topologically (the tape) and replays them in reverse.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
import scipy.sparse as sp

from ..errors import DetachedLoss, NotScalar, ShapeMismatch

DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True).reshape(t.shape)
    else:
        t.grad = t.grad + g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batching rules (both operands ≥ 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), bw)


def spmm(matrix, x) -> Tensor:
    """Product of a constant (sparse or dense) matrix with a 2-D tensor."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm dimensions differ: {matrix.shape} @ {x.shape}")
    out = matrix @ x.data
    out = np.asarray(out)

    def bw(g):
        _accumulate(x, np.asarray(matrix.T @ g))

    return _make(out, (x,), bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bw(g):
        _accumulate(x, g * (1.0 - y * y))

    return _make(y, (x,), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0  # subgradient 0 at the kink

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def bw(g):
        _accumulate(x, g * y)

    return _make(y, (x,), bw)


def log(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, g / x.data)

    return _make(np.log(x.data), (x,), bw)


def tabs(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bw(g):
        _accumulate(x, g * sign)

    return _make(np.abs(x.data), (x,), bw)


def clip_max(x, limit: float) -> Tensor:
    """Elementwise ``min(x, limit)``."""
    x = as_tensor(x)
    mask = x.data < limit

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.minimum(x.data, limit), (x,), bw)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    return _make(out, tuple(tensors), bw)


def gather(x, idx) -> Tensor:
    """Row gather ``x[idx]`` for an integer index array of any shape."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.max() >= x.shape[0] or idx.min() < -x.shape[0]):
        raise ShapeMismatch(f"gather index out of range for {x.shape[0]} rows")

    def bw(g):
        if x.requires_grad:
            full = np.zeros(x.shape, dtype=DTYPE)
            np.add.at(full, idx, g)
            _accumulate(x, full)

    return _make(x.data[idx], (x,), bw)


def index(x, key) -> Tensor:
    """Basic (non-advanced) slicing."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[key] += g
        _accumulate(x, full)

    return _make(x.data[key], (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), bw)


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(width, dtype=DTYPE)
        self.var = np.ones(width, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps

    def copy(self):
        other = BatchNormState(self.mean.shape[0], self.momentum, self.eps)
        other.mean = self.mean.copy()
        other.var = self.var.copy()
        return other


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Normalize a (N, d) tensor over its rows.

    Training mode uses batch statistics and updates ``state``; eval mode
    uses the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or x.shape[1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeMismatch(f"batch_norm shapes {x.shape}, {gamma.shape}, {beta.shape}")
    n = x.shape[0]
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        state.mean = (1 - m) * state.mean + m * mu
        state.var = (1 - m) * state.var + m * unbiased
    else:
        mu, var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def bw(g):
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dx = dxhat * inv_std
            _accumulate(x, dx)

    return _make(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- backward


def _tape(root: Tensor):
    """Topological order of the recorded graph ending at ``root``."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise DetachedLoss("loss does not depend on any tensor requiring grad")
    order = _tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            # leaf: keep the accumulated gradient
            if g is not None:
                node.grad = g if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        # route parent gradients through the dict instead of .grad
        saved = list({id(p): (p, p.grad) for p in node._parents}.values())
        for p, _ in saved:
            p.grad = None
        node._backward(g)
        for p, old in saved:
            if p.grad is not None:
                key = id(p)
                grads[key] = p.grad if key not in grads else grads[key] + p.grad
            p.grad = old
        node._parents = ()
        node._backward = None
