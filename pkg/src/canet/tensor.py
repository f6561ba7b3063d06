"""Tensors with reverse-mode automatic differentiation on a recorded tape.

Operations executed while a :class:`Tape` is active append nodes (inputs,
output, backward closure) whenever at least one input carries
``requires_grad``.  :func:`backward` replays the tape in reverse order,
visiting each node exactly once and accumulating gradients into the
``grad`` slot of every reachable tensor that requires one.

Numerics: values are float32 or float64 numpy arrays, row-major.  Training
runs in single precision; gradient checking (:func:`grad_check`) demands
double precision, where central differences are trustworthy at the 1e-5
level.

Concurrency: a tape and the tensors recorded on it belong to one worker at
a time.  Tensors without gradient state are immutable after creation and
safe to share read-only; independent tapes may run concurrently.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "TapeNode",
    "set_finite_checks",
    "stop_recording",
    "active_tape",
    "add",
    "multiply",
    "relu",
    "sigmoid",
    "elementwise_forward",
    "matmul",
    "tensor_sum",
    "reshape",
    "backward",
    "grad_check",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


# ---------------------------------------------------------------------------
# finiteness assertions (enabled by the test suite, off in normal runs)

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> bool:
    """Toggle post-op finiteness assertions; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in output of {op}")


# ---------------------------------------------------------------------------
# tensor and tape

class Tensor:
    """An n-dimensional float array with an optional gradient slot.

    ``data`` is a row-major numpy array (float32 or float64; other dtypes
    are converted to float32).  ``grad``, when populated by
    :func:`backward`, is a numpy array of identical shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # operator sugar for readable model code
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return multiply(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        return reshape(self, shape)


class TapeNode(NamedTuple):
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


_TAPE_STACK: list["Tape | None"] = []


class Tape:
    """Ordered record of operations; inputs of a node always precede it."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"


class stop_recording:
    """Context manager that suspends tape recording inside its block."""

    def __enter__(self) -> None:
        _TAPE_STACK.append(None)

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(inputs: tuple[Tensor, ...], output: Tensor, backward_fn) -> None:
    """Append a node to the active tape if any input requires gradients.

    Outputs of recorded nodes are marked ``requires_grad`` so that chains
    of operations keep recording.
    """
    tape = active_tape()
    if tape is None:
        return
    if not any(t.requires_grad for t in inputs):
        return
    output.requires_grad = True
    tape.nodes.append(TapeNode(tuple(inputs), output, backward_fn))


# ---------------------------------------------------------------------------
# broadcasting helpers (trailing-axis alignment, size-1 stretch only)

def _broadcast_shape(sa: tuple[int, ...], sb: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    for da, db in zip(reversed(sa), reversed(sb)):
        if da == db or da == 1 or db == 1:
            out.append(max(da, db))
        else:
            raise ShapeError(f"shapes {sa} and {sb} are not broadcast-compatible")
    longer = sa if len(sa) > len(sb) else sb
    out.extend(longer[: abs(len(sa) - len(sb))][::-1])
    return tuple(reversed(out))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g: np.ndarray):
        ga = _unbroadcast(g, a.shape) if need_a else None
        gb = _unbroadcast(g, b.shape) if need_b else None
        return ga, gb

    record((a, b), out, bwd)
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data * b.data)
    _check_finite(out.data, "multiply")
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g: np.ndarray):
        ga = _unbroadcast(g * b.data, a.shape) if need_a else None
        gb = _unbroadcast(g * a.data, b.shape) if need_b else None
        return ga, gb

    record((a, b), out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    _check_finite(out.data, "relu")
    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        return (g * (x.data > 0),)

    record((x,), out, bwd)
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_stable_sigmoid(x.data))
    _check_finite(out.data, "sigmoid")
    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        y = out.data
        return (g * y * (1.0 - y),)

    record((x,), out, bwd)
    return out


_UNARY_OPS = {"relu": relu, "sigmoid": sigmoid}
_BINARY_OPS = {"add": add, "multiply": multiply}


def elementwise_forward(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise operation by name.

    Binary ops (``add``, ``multiply``) broadcast along trailing axes with
    size-1 stretch; unary ops (``relu``, ``sigmoid``) take no second
    operand.
    """
    if op in _BINARY_OPS:
        if b is None:
            raise ValueError(f"binary op {op!r} requires two operands")
        return _BINARY_OPS[op](a, b)
    if op in _UNARY_OPS:
        if b is not None:
            raise ValueError(f"unary op {op!r} takes a single operand")
        return _UNARY_OPS[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    _check_finite(out.data, "matmul")
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g: np.ndarray):
        ga = g @ b.data.T if need_a else None
        gb = a.data.T @ g if need_b else None
        return ga, gb

    record((a, b), out, bwd)
    return out


def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        return (np.full(x.shape, float(g), dtype=x.dtype),)

    record((x,), out, bwd)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        return (g.reshape(x.shape),)

    record((x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking

def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Accumulate gradients of ``loss`` into every reachable tensor.

    Returns a map from each requires_grad leaf on the tape (a tensor that
    is not itself the output of a recorded node) to its gradient array;
    leaves that do not influence the loss receive zeros.  Repeated calls
    without resetting ``grad`` slots accumulate; the trainer resets
    between steps.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if not any(node.output is loss for node in tape.nodes):
        raise ValueError("loss was not produced on this tape")

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        gout = flowing.get(id(node.output))
        if gout is None:
            continue
        for tensor, g in zip(node.inputs, node.backward(gout)):
            if g is None:
                continue
            acc = flowing.get(id(tensor))
            flowing[id(tensor)] = g if acc is None else acc + g

    outputs = {id(node.output) for node in tape.nodes}
    leaves: dict[Tensor, np.ndarray] = {}
    seen: set[int] = set()
    for node in tape.nodes:
        for tensor in node.inputs + (node.output,):
            if id(tensor) in seen or not tensor.requires_grad:
                continue
            seen.add(id(tensor))
            g = flowing.get(id(tensor))
            if g is None:
                g = np.zeros_like(tensor.data)
            tensor.grad = g if tensor.grad is None else tensor.grad + g
            if id(tensor) not in outputs:
                leaves[tensor] = tensor.grad
    return leaves


def grad_check(forward_fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare tape gradients of a scalar function against central differences.

    Returns max over components of ``|analytic - numeric| / max(1, |numeric|)``.
    ``x`` must be double precision; it is restored bit-exactly afterwards.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check requires a double-precision tensor")
    if eps <= 0:
        raise ValueError("eps must be positive")

    orig_data = x.data.copy()
    orig_flag = x.requires_grad
    orig_grad = x.grad
    try:
        x.requires_grad = True
        x.grad = None
        with Tape() as tape:
            out = forward_fn(x)
            if out.size != 1:
                raise ValueError("forward_fn must return a scalar tensor")
        backward(out, tape)
        analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

        numeric = np.zeros_like(orig_data)
        flat = x.data.reshape(-1)
        nflat = numeric.reshape(-1)
        with stop_recording():
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + eps
                f_plus = float(forward_fn(x).data)
                flat[i] = saved - eps
                f_minus = float(forward_fn(x).data)
                flat[i] = saved
                nflat[i] = (f_plus - f_minus) / (2.0 * eps)

        denom = np.maximum(1.0, np.abs(numeric))
        return float(np.max(np.abs(analytic - numeric) / denom))
    finally:
        x.data[...] = orig_data
        x.requires_grad = orig_flag
        x.grad = orig_grad
