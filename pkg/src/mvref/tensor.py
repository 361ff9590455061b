"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Inspired by micrograd-style engines: numpy holds the values, a Wengert
list (the tape) records every primitive application whose output needs a
gradient, and backward() replays the tape in reverse exactly once.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class DegenerateRowError(ValueError):
    """A softmax slice contains only -inf entries."""


class GradientError(RuntimeError):
    """Autodiff contract violation (e.g. non-scalar backward root)."""


class Tensor:
    """A dense n-dimensional float64 array, optionally carrying a gradient.

    After any public operation on finite inputs the stored values are
    finite; -inf is admitted only as a masking sentinel fed to softmax.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GradientError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar -- all defined in terms of the module-level primitives
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, _wrap(1.0 / other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Entry:
    __slots__ = ("out", "inputs", "back")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], back: Callable):
        self.out = out
        self.inputs = inputs
        self.back = back


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Entries are appended in execution order, which is a topological order
    of the computation graph; backward() walks them once, in reverse.
    A tape is single-threaded; independent tapes share no state.
    """

    def __init__(self):
        self.entries: list[_Entry] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.remove(self)
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(tensor) into .grad of every participant."""
        if root.data.size != 1:
            raise GradientError(f"backward root must be scalar, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for entry in reversed(self.entries):
            g_out = entry.out.grad
            if g_out is None:
                continue  # not on a path from the root
            for inp, g in zip(entry.inputs, entry.back(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g


_TAPE_STACK: list[Tape] = []


def _record(out: Tensor, inputs: tuple[Tensor, ...], back: Callable) -> Tensor:
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1].entries.append(_Entry(out, inputs, back))
    return out


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, requires_grad=_needs_grad(a, b))

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=a.requires_grad)
    return _record(out, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, requires_grad=_needs_grad(a, b))

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions, when present, must match exactly."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_needs_grad(a, b))

    def back(g):
        return g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g

    return _record(out, (a, b), back)


def power(a: Tensor, exponent: float) -> Tensor:
    out = Tensor(a.data ** exponent, requires_grad=a.requires_grad)

    def back(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _record(out, (a,), back)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); smooth everywhere, so finite differences behave."""
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * s, requires_grad=a.requires_grad)

    def back(g):
        return (g * (s * (1.0 + a.data * (1.0 - s))),)

    return _record(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax; -inf logits map to exactly 0."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    rowmax = np.max(a.data, axis=axis, keepdims=True)
    if np.isneginf(rowmax).any():
        raise DegenerateRowError("softmax slice contains only -inf entries")
    e = np.exp(a.data - rowmax)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def back(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _record(out, (a,), back)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), _wrap(1.0 / count))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(a.data.swapaxes(ax1, ax2), requires_grad=a.requires_grad)
    return _record(out, (a,), lambda g: (g.swapaxes(ax1, ax2),))


def take(a: Tensor, index) -> Tensor:
    out = Tensor(a.data[index].copy(), requires_grad=a.requires_grad)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record(out, (a,), back)


def rotate_pairs(a: Tensor) -> Tensor:
    """Per 2D subspace (even, odd) -> (-odd, even); the 90-degree helper
    used to apply rotary encodings as cos/sin blends."""
    if a.shape[-1] % 2:
        raise ShapeError(f"rotate_pairs needs an even last dimension, got {a.shape}")
    y = np.empty_like(a.data)
    y[..., 0::2] = -a.data[..., 1::2]
    y[..., 1::2] = a.data[..., 0::2]
    out = Tensor(y, requires_grad=a.requires_grad)

    def back(g):
        gx = np.empty_like(g)
        gx[..., 1::2] = -g[..., 0::2]
        gx[..., 0::2] = g[..., 1::2]
        return (gx,)

    return _record(out, (a,), back)


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """Plain gradient descent: p <- p - lr * g. Deterministic, stateless."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} does not match param shape {p.data.shape}")
        p.data = p.data - lr * g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# flat binary tensor files (checkpoint / fixture exchange format)

TENSOR_MAGIC = b"F64TENSR"
_MAX_RANK = 16


def save_tensor(path, array: np.ndarray) -> None:
    """Write `array` as magic, rank byte, little-endian extents, row-major
    float64 payload."""
    arr = np.asarray(array, dtype=np.float64, order="C")
    if arr.ndim > _MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds the tensor file limit of {_MAX_RANK}")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            fh.write(struct.pack("<Q", extent))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic)")
    rank = struct.unpack_from("<B", blob, 8)[0]
    if rank > _MAX_RANK:
        raise ValueError(f"{path}: implausible rank {rank}")
    shape = struct.unpack_from(f"<{rank}Q", blob, 9) if rank else ()
    offset = 9 + 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = blob[offset:]
    if len(payload) != 8 * count:
        raise ValueError(f"{path}: payload holds {len(payload)} bytes, expected {8 * count}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
