"""Dense rank-4 (batch, channel, height, width) tensors with reverse-mode autodiff.

Only the operator set the segmentation network actually needs is provided.
Storage is float32 by default; float64 inputs are kept as-is so test oracles
can run the whole graph in double precision. Reductions always accumulate in
float64 regardless of storage dtype.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference / profiling)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Value-semantic rank-4 array with an optional gradient slot.

    Tensors produced by library ops carry closure-based tape nodes
    (``_parents`` + ``_backward``); ``backward`` on a scalar walks the tape in
    reverse topological order and accumulates gradients additively.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank-4, got shape {arr.shape}")
        if arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate grads of every tensor reachable from this scalar loss."""
        if self.shape != (1, 1, 1, 1):
            raise ContractError(f"backward requires a (1,1,1,1) scalar, got {self.shape}")
        if not self._parents:
            raise ContractError("backward called on a tensor with no recorded tape")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p._parents:
                    stack.append((p, False))
        self.accumulate_grad(np.ones((1, 1, 1, 1), dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # small operator sugar used throughout the model/loss code
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul_scalar(other, -1.0))
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_scalar(self, 1.0 / float(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


def _from_op(data: np.ndarray, parents: Sequence[Tensor],
             backward: Callable[[np.ndarray], None], op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as4(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 0 for s in shape):
        raise ShapeError(f"invalid rank-4 shape {shape}")
    return shape


# ---------------------------------------------------------------------------
# constructors

def full(shape, value: float, dtype=np.float32) -> Tensor:
    shape = _as4(shape)
    n = 1
    for s in shape:
        n *= s
    if n > 2**40:
        raise ShapeError(f"shape {shape} exceeds addressable size")
    return Tensor(np.full(shape, value, dtype=dtype))


def zeros(shape, dtype=np.float32) -> Tensor:
    return full(shape, 0.0, dtype=dtype)


def ones(shape, dtype=np.float32) -> Tensor:
    return full(shape, 1.0, dtype=dtype)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    return _from_op(a.data + b.data, (a, b), backward, "add")


def add_scalar(a: Tensor, s: float) -> Tensor:
    def backward(g):
        a.accumulate_grad(g)

    return _from_op(a.data + a.data.dtype.type(s), (a,), backward, "add_scalar")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(g * a.data)

    return _from_op(a.data * b.data, (a, b), backward, "mul")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)

    def backward(g):
        a.accumulate_grad(g * s)

    return _from_op(a.data * s, (a,), backward, "mul_scalar")


def mul_const(a: Tensor, w: np.ndarray) -> Tensor:
    """Elementwise product with a constant (non-differentiated) array."""
    w = np.asarray(w, dtype=a.data.dtype)
    if w.shape != a.data.shape:
        raise ShapeError(f"mul_const shape mismatch: {a.shape} vs {w.shape}")

    def backward(g):
        a.accumulate_grad(g * w)

    return _from_op(a.data * w, (a,), backward, "mul_const")


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a.accumulate_grad(g / b.data)
        b.accumulate_grad(-g * a.data / (b.data * b.data))

    return _from_op(a.data / b.data, (a, b), backward, "div")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; values are clamped below at ``floor`` when floor > 0."""
    x = np.maximum(a.data, a.data.dtype.type(floor)) if floor > 0.0 else a.data

    def backward(g):
        a.accumulate_grad(np.where(a.data > floor, g / np.maximum(x, np.finfo(x.dtype).tiny), 0.0)
                          if floor > 0.0 else g / a.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x)
    return _from_op(data, (a,), backward, "log")


def pow_scalar(a: Tensor, p: float) -> Tensor:
    if p == 0.0:
        data = np.ones_like(a.data)

        def backward0(g):
            a.accumulate_grad(np.zeros_like(a.data))

        return _from_op(data, (a,), backward0, "pow_scalar")
    data = np.power(a.data, p)

    def backward(g):
        # derivative at 0 for p<1 would blow up; clamp the base away from 0
        base = a.data if p >= 1.0 else np.maximum(a.data, np.finfo(a.data.dtype).tiny)
        a.accumulate_grad(g * p * np.power(base, p - 1.0))

    return _from_op(data, (a,), backward, "pow_scalar")


# ---------------------------------------------------------------------------
# shape ops

def concat_channels(*tensors: Tensor) -> Tensor:
    if len(tensors) < 2:
        raise ContractError("concat_channels needs at least two tensors")
    b, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        tb, _, th, tw = t.shape
        if (tb, th, tw) != (b, h, w):
            raise ShapeError(
                f"concat_channels mismatch: {tensors[0].shape} vs {t.shape}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g):
        for t, gslice in zip(tensors, np.split(g, splits, axis=1)):
            t.accumulate_grad(np.ascontiguousarray(gslice))

    return _from_op(np.concatenate([t.data for t in tensors], axis=1),
                    tensors, backward, "concat_channels")


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {a.shape}")

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        a.accumulate_grad(ga)

    return _from_op(np.ascontiguousarray(a.data[:, start:stop]), (a,), backward,
                    "slice_channels")


# ---------------------------------------------------------------------------
# reductions (float64 accumulation)

def sum_all(a: Tensor) -> Tensor:
    s = np.sum(a.data, dtype=np.float64)

    def backward(g):
        a.accumulate_grad(np.full_like(a.data, g.reshape(())))

    return _from_op(np.full((1, 1, 1, 1), s, dtype=a.data.dtype), (a,), backward, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.data.size)


def sum_weighted(a: Tensor, w: np.ndarray) -> Tensor:
    """Scalar ``sum(a * w)`` with a constant weight array."""
    w = np.asarray(w, dtype=a.data.dtype)
    if w.shape != a.data.shape:
        raise ShapeError(f"sum_weighted shape mismatch: {a.shape} vs {w.shape}")
    s = np.sum(a.data.astype(np.float64) * w.astype(np.float64))

    def backward(g):
        a.accumulate_grad(g.reshape(()) * w)

    return _from_op(np.full((1, 1, 1, 1), s, dtype=a.data.dtype), (a,), backward,
                    "sum_weighted")


def sum_channels(a: Tensor) -> Tensor:
    """Sum over the channel axis, keeping a singleton channel dim."""
    s = np.sum(a.data, axis=1, keepdims=True, dtype=np.float64).astype(a.data.dtype)

    def backward(g):
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _from_op(s, (a,), backward, "sum_channels")
