"""Dense tensors with a recorded tape for reverse-mode differentiation.

Every op in this module computes its forward value eagerly with numpy.  When a
:class:`Tape` is active on the current thread and at least one input requires a
gradient, the op appends a node holding a closure that maps the output
adjoint to the input adjoints.  :func:`backward` walks the tape in reverse.

Inference simply runs without an active tape, so nothing is recorded.
"""
from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""


_DEBUG = os.environ.get("PODEP_DEBUG", "") not in ("", "0")
_state = threading.local()


def set_debug(enabled: bool) -> None:
    global _DEBUG
    _DEBUG = bool(enabled)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of executed ops.  Use as a context manager."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(value)):
        shapes = [t.shape for t in inputs]
        raise NonFiniteError(f"{op}: non-finite output (input shapes {shapes})")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(Node(op, tuple(inputs), out, backward_fn))
    return out


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
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


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _broadcast_shape("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), back)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make("scale", a.data * factor, (a,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., k) @ (k, m) -> (..., m)`` or ``(..., k) @ (k,) -> (...)``."""
    if a.ndim == 0 or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back(g):
        if b.ndim == 1:
            ga = g[..., None] * b.data
            gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
        else:
            ga = g @ b.data.T
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        return ga, gb

    return _make("matmul", out, (a, b), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        index = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[ax] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    return _make("concat", out, tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _make("stack", out, tensors, back)


def slice_(a: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    try:
        out = a.data[index]
    except IndexError as err:
        raise ShapeError(f"slice: {err} for shape {a.shape}") from None

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make("slice", out, (a,), back)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.intp)
    n = a.shape[axis]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {a.shape}")
    out = np.take(a.data, idx, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (full,)

    return _make("take", out, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def detach(a: Tensor) -> Tensor:
    """Stop-gradient barrier: same values, no path back to ``a``."""
    return Tensor(a.data, requires_grad=False)


def sum_(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make("softmax", y, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", y, (a,), back)


def _first_argmax_mask(x: np.ndarray, axis: int) -> np.ndarray:
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    mask = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=axis)
    return mask


def max_over_time(x: Tensor, lengths=None) -> Tensor:
    """Max over axis -2 of a ``(..., T, C)`` tensor.

    ``lengths`` (shape ``x.shape[:-2]``) restricts the max to the first
    ``lengths[b]`` positions of each row.  Gradient goes to the first argmax.
    """
    if x.ndim < 2:
        raise ShapeError(f"max_over_time: need at least 2 dims, got {x.shape}")
    data = x.data
    if lengths is not None:
        lengths = np.asarray(lengths)
        if lengths.shape != x.shape[:-2]:
            raise ShapeError(f"max_over_time: lengths shape {lengths.shape} does not match {x.shape}")
        if lengths.size and lengths.min() < 1:
            raise ShapeError("max_over_time: every length must be >= 1")
        valid = np.arange(x.shape[-2]) < lengths[..., None]
        data = np.where(valid[..., None], data, -np.inf)
    mask = _first_argmax_mask(data, axis=-2)
    out = np.max(data, axis=-2).astype(x.dtype, copy=False)

    def back(g):
        return (mask * np.expand_dims(g, -2),)

    return _make("max_over_time", out, (x,), back)


def conv_over_time(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid 1-D convolution along time.

    ``x`` is ``(B, T, D)``, ``weight`` is ``(k, D, C)``; the result is
    ``(B, T-k+1, C)`` with ``out[b, t] = sum_j x[b, t+j] @ weight[j] + bias``.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv_over_time: incompatible shapes {x.shape} and {weight.shape}")
    k, d, c = weight.shape
    steps = x.shape[1] - k + 1
    if steps < 1:
        raise ShapeError(f"conv_over_time: sequence length {x.shape[1]} shorter than width {k}")
    windows = np.concatenate([x.data[:, j:j + steps, :] for j in range(k)], axis=-1)
    w2 = weight.data.reshape(k * d, c)
    out = windows @ w2
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        if bias.shape != (c,):
            raise ShapeError(f"conv_over_time: bias shape {bias.shape}, expected {(c,)}")
        out = out + bias.data
        inputs = (x, weight, bias)

    def back(g):
        gw = windows.reshape(-1, k * d).T @ g.reshape(-1, c)
        gwin = g @ w2.T
        gx = np.zeros_like(x.data)
        for j in range(k):
            gx[:, j:j + steps, :] += gwin[..., j * d:(j + 1) * d]
        grads = [gx, gw.reshape(k, d, c)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    return _make("conv_over_time", out, inputs, back)


def maxout(x: Tensor, pieces: int) -> Tensor:
    """Max over consecutive groups of ``pieces`` along the last axis."""
    n = x.shape[-1]
    if pieces < 1 or n % pieces:
        raise ShapeError(f"maxout: last dim {n} not divisible by {pieces} pieces")
    grouped = x.data.reshape(x.shape[:-1] + (n // pieces, pieces))
    mask = _first_argmax_mask(grouped, axis=-1)
    out = grouped.max(axis=-1)

    def back(g):
        return ((mask * g[..., None]).reshape(x.shape),)

    return _make("maxout", out, (x,), back)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity when ``train`` is false or ``rate`` is 0."""
    if not train or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError(f"dropout rate must be < 1, got {rate}")
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _make("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``logits`` of shape ``(C,)`` takes one integer target; ``(N, C)`` takes
    ``N`` targets and returns the mean.
    """
    target = np.asarray(target, dtype=np.intp)
    if logits.ndim == 1 and target.ndim == 0:
        rows = logits.data[None, :]
        target = target[None]
    elif logits.ndim == 2 and target.shape == (logits.shape[0],):
        rows = logits.data
    else:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {target.shape}")
    n = rows.shape[0]
    if n == 0:
        raise ShapeError("cross_entropy: empty batch")
    z = rows - rows.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(n), target]
    out = np.asarray(nll.mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), target] -= 1.0
        return ((g / n * p).reshape(logits.shape),)

    return _make("cross_entropy", out, (logits,), back)


# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Leaf tensors that require gradients get ``.grad`` accumulated.  Returns
    the gradients of ``wrt`` in order, zeros for tensors the loss does not
    depend on.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node.output), None)
        produced.add(id(node.output))
        if g is None:
            continue
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
        if _DEBUG:
            for gi in grads:
                if gi is not None and not np.all(np.isfinite(gi)):
                    raise NonFiniteError(f"{node.op}: non-finite gradient")
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves[id(inp)] = inp
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = adjoint.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    if wrt is None:
        return []
    out = []
    for t in wrt:
        g = adjoint.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else g)
    return out
