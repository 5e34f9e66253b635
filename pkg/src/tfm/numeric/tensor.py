"""Dense tensors with tape-recorded reverse-mode gradients.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient; with no tape active they are plain numpy calls.
Records are appended in execution order, so reversing the tape is a valid
topological order for the backward sweep. Gradient accumulation order is
therefore fixed by the forward program, which keeps results bit-reproducible.

Set ``TFM_DEBUG=1`` to assert finiteness after every operation.
"""
from __future__ import annotations

import os
import threading
from typing import Callable, Sequence

import numpy as np

from .. import kernels

DEBUG = os.environ.get("TFM_DEBUG") == "1"

_local = threading.local()


class NotScalarLoss(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


def _stack() -> list["Tape"]:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


class Tape:
    """Operation record for one forward pass."""

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    st = _stack()
    return st[-1] if st else None


class Tensor:
    __slots__ = ("data", "requires_grad", "param", "grad")

    def __init__(self, data, requires_grad: bool = False, param=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.param = param
        self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _bad_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", param={self.param.name!r}" if self.param is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(const(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _bad_item(t: Tensor) -> float:
    raise NotScalarLoss(f"tensor of shape {t.shape} is not a scalar")


def const(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable,
          allow_neg_inf: bool = False) -> Tensor:
    if DEBUG:
        bad = np.isnan(data) | np.isposinf(data)
        if not allow_neg_inf:
            bad |= np.isneginf(data)
        if bad.any():
            raise FloatingPointError("non-finite value produced by an operation")
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, True)
        tape.records.append((out, parents, backward))
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class BackwardReport:
    def __init__(self, touched: set[str], disconnected: list[str]):
        self.touched = touched
        self.disconnected = disconnected


def backward(tape: Tape, loss: Tensor, store=None) -> BackwardReport:
    """Accumulate d(loss)/d(param) into every parameter reached from ``loss``.

    Gradients add onto whatever the store already holds; callers zero them.
    Parameters of ``store`` that the loss does not depend on are reported as
    disconnected and keep their (zero) gradient.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss has shape {loss.shape}; backward needs a scalar")
    touched: set[str] = set()
    if loss.param is not None:
        loss.param.grad += 1.0
        touched.add(loss.param.name)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, gp in zip(parents, fn(g)):
            if gp is None or not p.requires_grad:
                continue
            if p.param is not None:
                p.param.grad += gp
                touched.add(p.param.name)
            elif p.grad is not None:  # free leaf made by variable()
                p.grad += gp
            elif id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    disconnected = [] if store is None else [n for n in store.names() if n not in touched]
    return BackwardReport(touched, disconnected)


def variable(data, dtype=np.float64) -> Tensor:
    """A free leaf tensor whose gradient lands in ``.grad``."""
    t = Tensor(np.array(data, dtype=dtype), requires_grad=True)
    t.grad = np.zeros_like(t.data)
    return t


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is stable for large |x|
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def cos(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


# ---------------------------------------------------------------- shapes

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    try:
        data = np.concatenate([p.data for p in parts], axis=ax)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _make(data, parts, bw)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis), 1.0 / n)


def gather(a: Tensor, idx) -> Tensor:
    """Rows of ``a`` (axis 0) at integer positions ``idx`` (any shape)."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def row_update(base: Tensor, idx, rows: Tensor) -> Tensor:
    """Copy of ``base`` with rows ``idx`` replaced by ``rows``.

    When nothing is being recorded the update happens in place, which keeps
    per-event refreshes O(1) on very large graphs. Callers must own ``base``.
    """
    idx = np.asarray(idx, dtype=np.intp)
    tape = active_tape()
    recording = tape is not None and (base.requires_grad or rows.requires_grad)
    if not recording:
        if base.param is not None:
            raise ValueError("refusing to update parameter storage in place")
        base.data[idx] = rows.data
        return base
    data = base.data.copy()
    data[idx] = rows.data

    def bw(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _make(data, (base, rows), bw)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a matrix ``b`` of shape (k, m)."""
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``w`` of shape (out, in)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


# ---------------------------------------------------------------- distributions

def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax; masked entries get probability 0.

    A slice whose entries are all masked yields all zeros.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted log-softmax; masked entries come out as -inf and carry no gradient."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("log_softmax over an empty support")
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def bw(g):
        gz = np.where(np.isfinite(y), g, 0.0)
        return (gz - p * gz.sum(axis=axis, keepdims=True),)

    return _make(y, (a,), bw, allow_neg_inf=True)


def pick(a: Tensor, index) -> Tensor:
    """Single element of ``a`` as a 0-d tensor."""
    index = tuple(np.atleast_1d(index)) if not isinstance(index, tuple) else index
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return _make(np.asarray(a.data[index]), (a,), bw)


def pair_scores(base: Tensor, offset: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """``relu(base + offset) @ w2 + b2`` for every row of ``base``.

    This is the second half of an MLP applied to ``[z_u || z_v]`` for a fixed
    ``u`` and every ``v``; the forward pass runs in the compiled kernel.
    """
    bd, od, wd = base.data, offset.data, w2.data
    out = kernels.pair_scores(bd, od, wd, float(b2.data.reshape(-1)[0]))

    def bw(g):
        pre = bd + od
        act = pre > 0
        gh = (g[:, None] * wd[None, :]) * act
        gbase = gh if base.requires_grad else None
        goff = gh.sum(axis=0) if offset.requires_grad else None
        gw = (np.maximum(pre, 0.0) * g[:, None]).sum(axis=0) if w2.requires_grad else None
        gb = np.full(b2.shape, g.sum(), dtype=g.dtype) if b2.requires_grad else None
        return gbase, goff, gw, gb

    return _make(out, (base, offset, w2, b2), bw)
