"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` whenever one of
their inputs requires a gradient.  Outside a tape they only compute values,
which is what the finite-difference checker relies on.

Broadcasting is never implicit.  Use :func:`expand` to broadcast explicitly;
the only exception is multiplication by a Python scalar (:func:`scale`).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "TapeError",
    "matmul", "masked_softmax", "causal_conv1d", "concat",
    "add", "multiply", "scale", "negate", "exp", "log", "sigmoid",
    "leaky_relu", "elu", "clip_min", "reshape", "transpose", "expand",
    "sum", "gather_rows", "take", "scatter_add", "backward", "current_tape",
]


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """A dense array of float64 values with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return negate(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


_local = threading.local()


def current_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the operations of one forward pass.

    Tapes are thread-local: each thread sees only the tapes it entered, so
    independent tapes may run concurrently as long as they share no tensors
    that are written to.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> Tape:
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape that has already run backward; call reset()")
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves.setdefault(id(t), t)
        self.nodes.append(_Node(kind, tuple(inputs), output, backward))
        self._produced.add(id(output))

    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def reset(self) -> None:
        """Clear leaf gradients so backward can be replayed."""
        for leaf in self._leaves.values():
            leaf.grad = None
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every leaf's ``grad``."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise TapeError("loss was not produced by this tape")
        if self._consumed:
            raise TapeError("backward already ran on this tape; call reset() first")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if g.shape != leaf.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match leaf {leaf.shape}")
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _result(kind: str, data: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, grad_fn)
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading batch axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul: incompatible ranks {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return _matmul_backward(ad, bd, g)

    return _result("matmul", ad @ bd, (a, b), grad_fn)


def _matmul_backward(ad, bd, g):
    return g @ _swap(bd), _swap(ad) @ g


# ---------------------------------------------------------------------------
# Attention primitives
# ---------------------------------------------------------------------------

def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis after adding a {0, -inf} mask.

    The mask is a constant and is broadcast against ``logits`` (numpy rules,
    result shape must equal the logits shape).  Masked positions come out
    exactly zero.
    """
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    try:
        fits = np.broadcast_shapes(m.shape, logits.shape) == logits.shape
    except ValueError:
        fits = False
    if not fits:
        raise ShapeError(f"masked_softmax: mask {m.shape} does not match logits {logits.shape}")
    if not np.all((m == 0.0) | np.isneginf(m)):
        raise ValueError("masked_softmax: mask entries must be exactly 0 or -inf")
    z = logits.data + m
    top = np.max(z, axis=-1, keepdims=True)
    if np.any(np.isneginf(top)):
        raise ValueError("masked_softmax: a row is fully masked")
    e = np.exp(z - top)
    # strictly left-to-right row sums: trailing masked zeros never change the
    # rounding, so padding a row leaves its probabilities bitwise unchanged
    y = e / np.cumsum(e, axis=-1)[..., -1:]

    def grad_fn(g):
        return (_softmax_backward(y, g),)

    return _result("masked_softmax", y, (logits,), grad_fn)


def _softmax_backward(y, g):
    return y * (g - np.sum(g * y, axis=-1, keepdims=True))


def causal_conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution along axis -2 with k-1 rows of left zero padding.

    ``x`` is ``[..., T, D]``, ``kernel`` is ``[k, D, F]`` and ``bias`` is ``[F]``.
    Output row t reads input rows t-k+1 .. t only.
    """
    if kernel.ndim != 3 or bias.ndim != 1 or x.ndim < 2:
        raise ShapeError(f"causal_conv1d: bad ranks x={x.shape} kernel={kernel.shape} bias={bias.shape}")
    k, d, f = kernel.shape
    if x.shape[-1] != d or bias.shape[0] != f:
        raise ShapeError(f"causal_conv1d: x={x.shape} kernel={kernel.shape} bias={bias.shape} disagree")
    steps = x.shape[-2]
    pad = np.zeros(x.shape[:-2] + (k - 1, d))
    xp = np.concatenate([pad, x.data], axis=-2)
    w = kernel.data
    out = np.zeros(x.shape[:-2] + (steps, f))
    for p in range(k):
        out += xp[..., p:p + steps, :] @ w[p]
    out += bias.data

    def grad_fn(g):
        return _conv_backward(xp, w, g, steps)

    return _result("causal_conv1d", out, (x, kernel, bias), grad_fn)


def _conv_backward(xp, w, g, steps):
    k = w.shape[0]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    lead = tuple(range(g.ndim - 1))
    for p in range(k):
        seg = xp[..., p:p + steps, :]
        gxp[..., p:p + steps, :] += g @ w[p].T
        gw[p] = np.tensordot(seg, g, axes=(lead, lead))
    gb = g.sum(axis=lead)
    return gxp[..., k - 1:, :], gw, gb


# ---------------------------------------------------------------------------
# Elementwise operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _result("multiply", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scale", x.data * c, (x,), lambda g: (g * c,))


def negate(x: Tensor) -> Tensor:
    return _result("negate", -x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise ValueError("log: argument must be strictly positive")
    return _result("log", np.log(xd), (x,), lambda g: (g / xd,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (_sigmoid_backward(y, g),)

    return _result("sigmoid", y, (x,), grad_fn)


def _sigmoid_backward(y, g):
    return g * y * (1.0 - y)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    y = np.where(xd > 0, xd, slope * xd)

    def grad_fn(g):
        return (_leaky_relu_backward(xd, g, slope),)

    return _result("leaky_relu", y, (x,), grad_fn)


def _leaky_relu_backward(xd, g, slope):
    return np.where(xd > 0, g, slope * g)


def elu(x: Tensor) -> Tensor:
    xd = x.data
    neg = np.expm1(np.minimum(xd, 0.0))
    y = np.where(xd > 0, xd, neg)

    def grad_fn(g):
        return (_elu_backward(xd, g),)

    return _result("elu", y, (x,), grad_fn)


def _elu_backward(xd, g):
    return np.where(xd > 0, g, g * np.exp(np.minimum(xd, 0.0)))


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); the gradient is zero where the floor is active."""
    xd = x.data
    keep = xd >= floor
    return _result("clip_min", np.where(keep, xd, floor), (x,), lambda g: (np.where(keep, g, 0.0),))


# ---------------------------------------------------------------------------
# Shape manipulation and reductions
# ---------------------------------------------------------------------------

def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat: empty sequence")
    ndim = parts[0].ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: {parts[0].shape} and {p.shape} disagree off axis {axis}")
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result("concat", np.concatenate([p.data for p in parts], axis=ax), tuple(parts), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``x`` (numpy rules) to ``shape``; backward sums."""
    shape = tuple(shape)
    src = x.shape
    try:
        y = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"expand: cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def grad_fn(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        keep = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True)
        return (g,)

    return _result("expand", y, (x,), grad_fn)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is None:
        return _result("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))
    ax = axis % x.ndim

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _result("sum", x.data.sum(axis=ax), (x,), grad_fn)


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows ``x[index]`` along axis 0; repeated indices accumulate in backward."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape
    width = int(np.prod(shape[1:], dtype=np.int64))

    def grad_fn(g):
        flat = (idx[:, None] * width + np.arange(width)).ravel()
        return (np.bincount(flat, weights=g.ravel(), minlength=x.data.size).reshape(shape),)

    return _result("gather_rows", x.data[idx], (x,), grad_fn)


def take(x: Tensor, index) -> Tensor:
    """Gather ``x.ravel()[index]``; the result has the shape of ``index``."""
    idx = np.asarray(index, dtype=np.int64)
    size, shape = x.data.size, x.shape
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"take: index out of range for {size} elements")

    def grad_fn(g):
        return (np.bincount(idx.ravel(), weights=g.ravel(), minlength=size).reshape(shape),)

    return _result("take", x.data.reshape(-1)[idx], (x,), grad_fn)


def scatter_add(x: Tensor, index, shape: Sequence[int]) -> Tensor:
    """Zeros of ``shape`` with ``x`` summed into flat positions ``index``; adjoint of :func:`take`."""
    idx = np.asarray(index, dtype=np.int64)
    shape = tuple(shape)
    size = int(np.prod(shape, dtype=np.int64))
    if idx.shape != x.shape:
        raise ShapeError(f"scatter_add: index shape {idx.shape} != values {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"scatter_add: index out of range for {size} elements")
    out = np.bincount(idx.ravel(), weights=x.data.ravel(), minlength=size).reshape(shape)
    return _result("scatter_add", out, (x,), lambda g: (g.reshape(-1)[idx],))
