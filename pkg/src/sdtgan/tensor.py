"""Dense tensors with tape-based reverse-mode differentiation.

Every model and loss in the package is composed from the operations in this
module, so any gradient can be checked against central finite differences
(see :mod:`sdtgan.gradcheck`).

A :class:`Tape` records operations while it is active::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).sum()
    grads = tape.backward(loss)     # {w: ndarray}

Outside an active tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAX_RANK = 4
LOG_EPS = 1e-12

_dtype_stack: list[type] = [np.float32]
_tape_stack: list["Tape"] = []


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def default_dtype():
    return _dtype_stack[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly constructed tensors."""
    _dtype_stack.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype_stack.pop()


class Tensor:
    """An immutable n-d float array, optionally a trainable leaf."""

    __slots__ = ("data", "requires_grad", "name", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64) or arr.dtype != default_dtype():
            arr = arr.astype(default_dtype())
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _result(cls, data: np.ndarray) -> "Tensor":
        if data.ndim > MAX_RANK:
            raise DimensionError(f"rank {data.ndim} exceeds maximum rank {MAX_RANK}")
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._result(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so every node's inputs precede
    it and a reverse walk is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t._tape is self

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Gradients of scalar ``loss`` for every trainable leaf it depends on.

        Leaves that never received a gradient are omitted unless listed in
        ``wrt``, in which case they get an explicit zero array. A loss that
        depends on nothing trainable has no gradients at all.
        """
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.tracks(loss):
            return {t: np.zeros_like(t.data) for t in (wrt or ())}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, tg in zip(node.inputs, in_grads):
                if t is None or tg is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + tg
                else:
                    grads[key] = tg
                if t.requires_grad:
                    leaves[key] = t
        out = {t: grads[k] for k, t in leaves.items()}
        if wrt is not None:
            for t in wrt:
                if t not in out:
                    out[t] = np.zeros_like(t.data)
        return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    return tape.backward(loss)


def _record(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, recording it on the active tape if any input is tracked."""
    out = Tensor._result(data)
    if _tape_stack:
        tape = _tape_stack[-1]
        mask = [t if tape.tracks(t) else None for t in inputs]
        if any(m is not None for m in mask):
            out._tape = tape
            tape.nodes.append(_Node(out, mask, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a, eps: float = LOG_EPS) -> Tensor:
    """``log(max(a, eps))``; the floor keeps degenerate inputs finite."""
    a = as_tensor(a)
    safe = np.maximum(a.data, eps)
    return _record(np.log(safe), (a,), lambda g: (np.where(a.data > eps, g / safe, 0.0).astype(g.dtype),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, a.data * slope)
    return _record(out, (a,), lambda g: (np.where(pos, g, g * slope),))


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


# ------------------------------------------------------------------- shapes


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            return a
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else t.ndim + 1 + axis, 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices ``indices`` along ``axis``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _record(np.take(a.data, idx, axis=axis), (a,), back)


# --------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def sum_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), back)


def mean_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _record(np.asarray(out, dtype=a.data.dtype), (a,), back)


def softmax_axis(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _norm_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), back)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _norm_axis(axis, a.ndim)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _record(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def l2_normalize(a, axis: int = -1) -> Tensor:
    """Scale each slice along ``axis`` to unit L2 norm; all-zero slices pass through."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    zero = norm == 0
    safe = np.where(zero, 1.0, norm).astype(a.data.dtype)
    out = a.data / safe

    def back(g):
        proj = g - out * (g * out).sum(axis=axis, keepdims=True)
        return (np.where(zero, g, proj / safe),)

    return _record(out, (a,), back)


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul shape mismatch: {a.shape} and {b.shape}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _record(out, (a, b), back)


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected F×T×C or N×F×T×C grid, got shape {x.shape}")


def conv2d(x, kernel, stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution over the (F, T) axes of a channels-last grid.

    ``kernel`` has shape (kF, kT, C_in, C_out) with odd spatial extents.
    Output spatial extents are ``ceil(input / stride)``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    kf, kt, cin, cout = kernel.shape
    if kf % 2 == 0 or kt % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kf}x{kt}")
    xb, squeezed = _as_batched(x)
    n, f, t, c = xb.shape
    if c != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    pf, pt = kf // 2, kt // 2
    xp = np.pad(xb.data, ((0, 0), (pf, pf), (pt, pt), (0, 0)))
    win = sliding_window_view(xp, (kf, kt), axis=(1, 2))[:, ::stride, ::stride]
    fo, to = win.shape[1], win.shape[2]
    # win: n, fo, to, c, kf, kt -> columns ordered (kf, kt, c)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * fo * to, kf * kt * c)
    kmat = kernel.data.reshape(kf * kt * cin, cout)
    out = (cols @ kmat).reshape(n, fo, to, cout)

    def back(g):
        g2 = g.reshape(n * fo * to, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gcols = (g2 @ kmat.T).reshape(n, fo, to, kf, kt, c)
        gxp = np.zeros_like(xp)
        for i in range(kf):
            for j in range(kt):
                gxp[:, i:i + stride * fo:stride, j:j + stride * to:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, pf:pf + f, pt:pt + t, :]
        if squeezed:
            gx = gx[0]
        return (np.ascontiguousarray(gx), gk)

    if squeezed:
        out = out[0]
    return _record(out, (x, kernel), back)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    """Repeat every (F, T) cell ``factor`` times along both spatial axes."""
    x = as_tensor(x)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    fa, ta = x.ndim - 3, x.ndim - 2
    out = np.repeat(np.repeat(x.data, factor, axis=fa), factor, axis=ta)

    def back(g):
        shape = list(x.shape)
        shape[fa:ta + 1] = [shape[fa], factor, shape[ta], factor]
        return (g.reshape(shape).sum(axis=(fa + 1, ta + 2)),)

    return _record(out, (x,), back)
