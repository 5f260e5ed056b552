"""Dense tensors with tape-based reverse-mode gradients.

Operations are recorded at matrix granularity (matmul, elementwise, reductions,
softmax, normalization). A node is recorded only while a GradientTape is active
and at least one input requires a gradient, so evaluation under a frozen
snapshot leaves no trace.
"""
from __future__ import annotations

import logging
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from structalign.exceptions import (
    DisconnectedParameterError,
    NotScalarError,
    ShapeMismatchError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

# Norms at or below this are treated as zero vectors
ZERO_NORM = 1e-12

_ACTIVE_TAPE: ContextVar["GradientTape | None"] = ContextVar("structalign_active_tape", default=None)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An n-dimensional float64 array that can take part in gradient recording."""

    __slots__ = ("value", "requires_grad", "grad", "name")
    # ndarray op Tensor must dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, value: Any, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape}{label} requires_grad={self.requires_grad}>"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def item(self) -> float:
        if self.value.size != 1:
            raise NotScalarError(f"item() needs a single value, got shape {self.shape}")
        return float(self.value.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.value, requires_grad=False, name=self.name)

    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: Any) -> "Tensor":
        return matmul(other, self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def tanh(self) -> "Tensor":
        return tanh(self)


@dataclass
class TapeRecord:
    """One recorded operation: output node, its parents, and the vector-Jacobian product."""

    output: Tensor
    parents: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


@dataclass
class GradientTape:
    """Records operations in execution order and tracks the parameters to differentiate.

    Usage::

        with GradientTape() as tape:
            tape.watch(params)
            loss = f(params)
        grads = backward(loss, tape)
    """

    records: list[TapeRecord] = field(default_factory=list)
    parameters: dict[str, Tensor] = field(default_factory=dict)
    _token: Any = field(default=None, repr=False)

    def __enter__(self) -> "GradientTape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def watch(self, params: dict[str, Tensor] | Iterable[tuple[str, Tensor]]) -> None:
        """Register parameters; each gets requires_grad=True."""
        items = params.items() if isinstance(params, dict) else params
        for name, tensor in items:
            tensor.requires_grad = True
            self.parameters[name] = tensor

    def record(self, record: TapeRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> GradientTape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _emit(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=requires_grad)
    tape = _ACTIVE_TAPE.get()
    if requires_grad and tape is not None:
        tape.record(TapeRecord(output=out, parents=parents, backward=backward_fn, op=op))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axis: Any, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(grad, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(sorted(a % len(shape) for a in axes))
        for a in axes:
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------

def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(a.value + b.value, (a, b), backward_fn, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(a.value - b.value, (a, b), backward_fn, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g: np.ndarray):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _emit(a.value * b.value, (a, b), backward_fn, "mul")


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g: np.ndarray):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        )

    return _emit(a.value / b.value, (a, b), backward_fn, "div")


def neg(a: Any) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.value, (a,), lambda g: (-g,), "neg")


def power(a: Any, exponent: float) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g: np.ndarray):
        return (g * exponent * np.power(a.value, exponent - 1),)

    return _emit(np.power(a.value, exponent), (a,), backward_fn, "pow")


def matmul(a: Any, b: Any) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward_fn(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(np.matmul(a.value, b.value), (a, b), backward_fn, "matmul")


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def exp(a: Any) -> Tensor:
    a = as_tensor(a)
    out_value = np.exp(a.value)
    return _emit(out_value, (a,), lambda g: (g * out_value,), "exp")


def log(a: Any) -> Tensor:
    a = as_tensor(a)
    return _emit(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def tanh(a: Any) -> Tensor:
    a = as_tensor(a)
    out_value = np.tanh(a.value)
    return _emit(out_value, (a,), lambda g: (g * (1.0 - out_value * out_value),), "tanh")


def sqrt(a: Any) -> Tensor:
    a = as_tensor(a)
    out_value = np.sqrt(a.value)
    return _emit(out_value, (a,), lambda g: (g / (2.0 * out_value),), "sqrt")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def reduce_sum(a: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g: np.ndarray):
        return (_expand_reduced(g, a.shape, axis, keepdims).copy(),)

    return _emit(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward_fn, "sum")


def reduce_mean(a: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward_fn(g: np.ndarray):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _emit(np.mean(a.value, axis=axis, keepdims=keepdims), (a,), backward_fn, "mean")


def reduce_max(a: Any, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient flows to the first maximizing entry."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    value = np.take_along_axis(a.value, idx, axis=axis)

    def backward_fn(g: np.ndarray):
        g_full = g if keepdims else np.expand_dims(g, axis)
        out = np.zeros_like(a.value)
        np.put_along_axis(out, idx, g_full, axis=axis)
        return (out,)

    return _emit(value if keepdims else np.squeeze(value, axis=axis), (a,), backward_fn, "max")


def reshape(a: Any, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a: Any, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    return _emit(
        np.swapaxes(a.value, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),), "swapaxes"
    )


def getitem(a: Any, index: Any) -> Tensor:
    a = as_tensor(a)

    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def backward_fn(g: np.ndarray):
        out = np.zeros_like(a.value)
        if advanced:
            np.add.at(out, index, g)
        else:
            # basic indexing addresses each element at most once
            out[index] = g
        return (out,)

    return _emit(a.value[index], (a,), backward_fn, "getitem")


def concatenate(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g: np.ndarray):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(np.concatenate([p.value for p in parts], axis=axis), parts, backward_fn, "concatenate")


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    expanded = []
    for p in parts:
        ax = axis if axis >= 0 else axis + p.ndim + 1
        expanded.append(reshape(p, p.shape[:ax] + (1,) + p.shape[ax:]))
    return concatenate(expanded, axis=axis)


# ---------------------------------------------------------------------------
# fused numerically-stable ops
# ---------------------------------------------------------------------------

def softmax_values(z: np.ndarray, axis: int = -1, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax_values(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))


def softmax_op(a: Any, axis: int = -1, temperature: float = 1.0, mask: np.ndarray | None = None) -> Tensor:
    """Softmax of a/temperature along an axis; masked-out entries are exactly zero."""
    a = as_tensor(a)
    s = softmax_values(a.value / temperature, axis=axis, mask=mask)

    def backward_fn(g: np.ndarray):
        return ((s * (g - np.sum(g * s, axis=axis, keepdims=True))) / temperature,)

    return _emit(s, (a,), backward_fn, "softmax")


def log_softmax_op(a: Any, axis: int = -1, temperature: float = 1.0) -> Tensor:
    a = as_tensor(a)
    out_value = log_softmax_values(a.value / temperature, axis=axis)
    s = np.exp(out_value)

    def backward_fn(g: np.ndarray):
        return ((g - s * np.sum(g, axis=axis, keepdims=True)) / temperature,)

    return _emit(out_value, (a,), backward_fn, "log_softmax")


def normalize_op(a: Any, axis: int = -1) -> Tensor:
    """Divide by the l2 norm along an axis."""
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.value * a.value, axis=axis, keepdims=True))
    smallest = float(np.min(norm)) if norm.size else 0.0
    if smallest <= ZERO_NORM:
        raise ZeroVectorError(f"cannot normalize a vector of norm {smallest:.3e}", norm=smallest)
    y = a.value / norm

    def backward_fn(g: np.ndarray):
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,)

    return _emit(y, (a,), backward_fn, "normalize")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: GradientTape, strict: bool = False) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(node) through the tape and return gradients of watched parameters.

    Parameters the loss does not depend on receive a zero gradient and are
    logged; with ``strict=True`` they raise DisconnectedParameterError instead.
    """
    if loss.size != 1:
        raise NotScalarError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for record in reversed(tape.records):
        g = grads.pop(id(record.output), None)
        if g is None:
            continue
        for parent, parent_grad in zip(record.parents, record.backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else np.array(parent_grad, dtype=np.float64)

    result: dict[str, np.ndarray] = {}
    for name, param in tape.parameters.items():
        g = grads.get(id(param))
        if g is None:
            if strict:
                raise DisconnectedParameterError(f"parameter {name!r} does not influence the loss")
            logger.warning(f"Disconnected parameter {name}: gradient set to zero")
            g = np.zeros_like(param.value)
        param.grad = g
        result[name] = g
    return result
