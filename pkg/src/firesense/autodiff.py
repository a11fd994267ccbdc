"""Reverse-mode automatic differentiation over 2-D float64 arrays.

Each :class:`Tensor` records the op that produced it and a closure that maps
the output gradient to input gradients. ``backward`` walks the graph in
reverse topological order. Gather/segment ops take a :class:`Segments`
helper so the sort needed for scatter-style reductions is done once per
graph batch rather than once per op.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteError, ShapeMismatch

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
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("non-finite value in tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)
    __truediv__ = lambda self, o: mul(self, 1.0 / _value(o))


def _value(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked tensor."""
    if grad is None:
        if loss.data.size != 1:
            raise ShapeMismatch("backward() without a seed gradient needs a scalar")
        grad = np.ones_like(loss.data)
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:  # leaf
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# elementwise and linear algebra ------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, (a, b), lambda g: (g @ b.data.T if a.requires_grad else None,
                                         a.data.T @ g if b.requires_grad else None))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a, eps: float = 0.0) -> Tensor:
    """sqrt(a + eps); ``eps`` keeps the derivative finite at zero."""
    a = as_tensor(a)
    out = np.sqrt(a.data + eps)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    if axis is None:
        return _make(a.data.sum().reshape(1, 1), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    out = a.data.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def max(a, axis=None) -> Tensor:  # noqa: A001
    """Maximum with the gradient routed to the first maximising entry."""
    a = as_tensor(a)
    if axis is None:
        flat = int(np.argmax(a.data))
        out = a.data.reshape(-1)[flat].reshape(1, 1)

        def bw(g):
            ga = np.zeros_like(a.data)
            ga.reshape(-1)[flat] = g[0, 0]
            return (ga,)
        return _make(out, (a,), bw)
    idx = np.argmax(a.data, axis=axis)
    if axis == 0:
        out = a.data[idx, np.arange(a.shape[1])].reshape(1, -1)
    else:
        out = a.data[np.arange(a.shape[0]), idx].reshape(-1, 1)

    def bw_axis(g):
        ga = np.zeros_like(a.data)
        if axis == 0:
            ga[idx, np.arange(a.shape[1])] = g[0]
        else:
            ga[np.arange(a.shape[0]), idx] = g[:, 0]
        return (ga,)
    return _make(out, (a,), bw_axis)


def linear(x, w, b, activation: str = "identity", pre=None) -> Tensor:
    """Fused ``act(x @ w + b)`` (``pre`` is added before the activation if given).

    One node in the graph instead of three or four; saves the intermediate
    buffers of the unfused form, which dominate wide edge-level layers.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"matmul {x.shape} @ {w.shape}")
    z = x.data @ w.data
    if pre is not None:
        pre = as_tensor(pre)
        z += pre.data
    z += b.data
    parents = (x, w, b) if pre is None else (x, w, b, pre)
    if activation == "relu":
        mask = z > 0
        np.maximum(z, 0.0, out=z)
    elif activation == "sigmoid":
        z = 0.5 * (1.0 + np.tanh(0.5 * z))
        sig = z
    elif activation != "identity":
        raise ValueError(f"unknown activation {activation!r}")

    def bw(g):
        if activation == "relu":
            g = g * mask
        elif activation == "sigmoid":
            g = g * sig * (1.0 - sig)
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        out = (gx, gw, gb)
        if pre is not None:
            out += (g if pre.requires_grad else None,)
        return out
    return _make(z, parents, bw)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(out, ts, bw)


def rows(a, start: int, stop: int) -> Tensor:
    """Contiguous row slice ``a[start:stop]``."""
    a = as_tensor(a)

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return (ga,)
    return _make(a.data[start:stop], (a,), bw)


def columns(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=int)
    out = a.data[:, idx]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None), idx), g)
        return (ga,)
    return _make(out, (a,), bw)


# graph ops ------------------------------------------------------------------

class Segments:
    """Index structure for a segment-id vector, shared by gather/scatter ops.

    Sums go through a cached sparse indicator matrix; maxima through a
    padded (segment x max_count) gather, which keeps both fast and
    deterministic.
    """

    __slots__ = ("ids", "n", "counts", "nonempty", "_indicator", "_padded")

    def __init__(self, ids, n: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ShapeMismatch("segment id out of range")
        self.ids = ids
        self.n = int(n)
        self.counts = np.bincount(ids, minlength=n)
        self.nonempty = np.flatnonzero(self.counts)
        self._indicator = None
        self._padded = None

    @property
    def indicator(self):
        if self._indicator is None:
            m = self.ids.size
            self._indicator = sp.csr_matrix((np.ones(m), (self.ids, np.arange(m))), shape=(self.n, m))
        return self._indicator

    @property
    def padded(self) -> np.ndarray:
        """``n x max_count`` row indices per segment in row order; ``m`` pads."""
        if self._padded is None:
            m = self.ids.size
            order = np.argsort(self.ids, kind="stable")
            starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
            rank = np.arange(m) - starts[self.ids[order]]
            width = int(self.counts.max()) if m else 0
            pad = np.full((self.n, width), m, dtype=np.int64)
            pad[self.ids[order], rank] = order
            self._padded = pad
        return self._padded

    def reduce_sum(self, values: np.ndarray) -> np.ndarray:
        if self.ids.size == 0:
            return np.zeros((self.n, values.shape[1]))
        return np.asarray(self.indicator @ values)


def _segments(seg, n=None) -> Segments:
    if isinstance(seg, Segments):
        return seg
    seg = np.asarray(seg, dtype=np.int64)
    return Segments(seg, int(n) if n is not None else int(seg.max()) + 1)


def gather_rows(a, seg) -> Tensor:
    """``a[idx]``; ``seg`` is a :class:`Segments` over ``idx`` (or the raw index)."""
    a = as_tensor(a)
    seg = _segments(seg, a.shape[0])
    if seg.n != a.shape[0]:
        raise ShapeMismatch("gather index built for a different row count")
    out = a.data[seg.ids]
    return _make(out, (a,), lambda g: (seg.reduce_sum(g),))


def segment_sum(a, seg, n=None) -> Tensor:
    a = as_tensor(a)
    seg = _segments(seg, n)
    if seg.ids.size != a.shape[0]:
        raise ShapeMismatch("segment ids must match rows")
    return _make(seg.reduce_sum(a.data), (a,), lambda g: (g[seg.ids],))


def segment_mean(a, seg, n=None) -> Tensor:
    a = as_tensor(a)
    seg = _segments(seg, n)
    if seg.ids.size != a.shape[0]:
        raise ShapeMismatch("segment ids must match rows")
    inv = np.zeros((seg.n, 1))
    inv[seg.counts > 0, 0] = 1.0 / seg.counts[seg.counts > 0]
    out = seg.reduce_sum(a.data) * inv
    return _make(out, (a,), lambda g: ((g * inv)[seg.ids],))


def segment_max(a, seg, n=None) -> Tensor:
    """Column-wise max per segment; empty segments give zeros.

    The gradient of each (segment, column) goes to the first row attaining
    the maximum.
    """
    a = as_tensor(a)
    seg = _segments(seg, n)
    if seg.ids.size != a.shape[0]:
        raise ShapeMismatch("segment ids must match rows")
    d = a.shape[1]
    if seg.ids.size == 0:
        return _make(np.zeros((seg.n, d)), (a,), lambda g: (np.zeros_like(a.data),))
    pad = seg.padded
    ext = np.vstack([a.data, np.full((1, d), -np.inf)])
    vals = ext[pad]  # n x width x d
    arg = np.argmax(vals, axis=1)  # first maximum in row order
    out = np.take_along_axis(vals, arg[:, None, :], axis=1)[:, 0, :]
    out[seg.counts == 0] = 0.0
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)
    src_rows = np.take_along_axis(pad, arg, axis=1)[seg.nonempty]
    cols = np.broadcast_to(np.arange(d), src_rows.shape)

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[src_rows, cols] = g[seg.nonempty]
        return (ga,)
    return _make(out, (a,), bw)
