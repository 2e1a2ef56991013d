"""Tape-based reverse-mode differentiation over numpy arrays.

Every ``Value`` gets a monotonically increasing id when it is created, so the
creation order is a valid topological order of the graph and ``backward`` just
walks reachable nodes by decreasing id.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

_ids = itertools.count()


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Value", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.id = next(_ids)
        self.name = name

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Value{tag}(shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self) -> "Value":
        return transpose(self)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: incoming arrays may be shared with other nodes
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.data.shape:
            g = g.reshape(self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, o: matmul(self, o)
    __pow__ = lambda self, p: power(self, p)

    def __getitem__(self, key) -> "Value":
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False) -> "Value":
        return vsum(self, axis, keepdims)

    def mean(self, axis=None) -> "Value":
        return mean(self, axis)

    def reshape(self, *shape) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data, name: Optional[str] = None) -> Value:
    return Value(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _node(data, parents: Sequence[Value], backward: Callable[[np.ndarray], None]) -> Value:
    out = Value(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Value, seed: float = 1.0) -> List[Value]:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    Returns the leaf values that received gradients, in discovery order.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return []
    seen = {loss.id: loss}
    stack = [loss]
    while stack:
        v = stack.pop()
        for p in v._parents:
            if p.id not in seen:
                seen[p.id] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda v: v.id, reverse=True)
    loss._accumulate(np.full(loss.data.shape, seed))
    leaves = []
    for v in order:
        if v._backward is None:
            if v.grad is not None:
                v.grad = np.array(v.grad, copy=True)
            leaves.append(v)
            continue
        if v.grad is not None:
            v._backward(v.grad)
    return leaves


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), bw)


def power(a: Value, p: float) -> Value:
    p = float(p)
    return _node(a.data**p, (a,), lambda g: a._accumulate(g * p * a.data ** (p - 1.0)))


def relu(a: Value) -> Value:
    out = np.maximum(a.data, 0.0)
    return _node(out, (a,), lambda g: a._accumulate(g * (out > 0.0)))


def sigmoid(a: Value) -> Value:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def log(a: Value) -> Value:
    return _node(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def exp(a: Value) -> Value:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: a._accumulate(g * out))


def sin(a: Value) -> Value:
    return _node(np.sin(a.data), (a,), lambda g: a._accumulate(g * np.cos(a.data)))


def cos(a: Value) -> Value:
    return _node(np.cos(a.data), (a,), lambda g: a._accumulate(-g * np.sin(a.data)))


def clip(a: Value, lo: float, hi: float) -> Value:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: a._accumulate(g * inside))


def smooth_l1(a: Value, beta: float = 1.0) -> Value:
    """Elementwise smooth-L1: 0.5 x^2 / beta inside |x| < beta, |x| - beta / 2 outside."""
    x = a.data
    ax = np.abs(x)
    quad = ax < beta
    out = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta)
    return _node(out, (a,), lambda g: a._accumulate(g * np.where(quad, x / beta, np.sign(x))))


def norm(a: Value, axis: int = -1) -> Value:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as zero."""
    n = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        safe = np.where(n > 0.0, n, 1.0)
        scale = np.where(n > 0.0, g / safe, 0.0)
        a._accumulate(np.expand_dims(scale, axis) * a.data)

    return _node(n, (a,), bw)


# ---------------------------------------------------------------- linear algebra / shape


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


def transpose(a: Value) -> Value:
    return _node(a.data.T, (a,), lambda g: a._accumulate(g.T))


def reshape(a: Value, shape) -> Value:
    return _node(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def getitem(a: Value, key) -> Value:
    out = a.data[key]

    basic = all(isinstance(k, (slice, int, type(None))) for k in (key if isinstance(key, tuple) else (key,)))

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        a._accumulate(full)

    return _node(out, (a,), bw)


def gather_rows(a: Value, idx: np.ndarray) -> Value:
    """Rows of a 2D value picked by an integer array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def bw(g):
        flat = idx.reshape(-1)
        g2 = g.reshape(-1, a.shape[1])
        # column-wise bincount is a faster scatter-add than np.add.at
        cols = [np.bincount(flat, weights=g2[:, c], minlength=a.shape[0]) for c in range(a.shape[1])]
        a._accumulate(np.stack(cols, axis=1) if cols else np.zeros_like(a.data))

    return _node(out, (a,), bw)


def concat(values: Iterable, axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in values])

    def bw(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                v._accumulate(g[tuple(sl)])

    return _node(out, values, bw)


def vsum(a: Value, axis=None, keepdims: bool = False) -> Value:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw)


def mean(a: Value, axis=None) -> Value:
    n = a.data.size if axis is None else a.data.shape[axis]
    return vsum(a, axis) * (1.0 / n)


def vmax(a: Value, axis: int) -> Value:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    arg = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    return _node(out, (a,), bw)


def log_softmax(a: Value, axis: int = -1) -> Value:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _node(out, (a,), bw)
