"""Minimal define-by-run reverse-mode autodiff over 2-D float64 arrays.

Every op appends a record to the active :class:`Tape`. ``backward`` replays
the tape in reverse, so recording order doubles as the topological order.
Only the operations the contextual-similarity losses need are provided;
broadcasting is limited to ``(n, m)`` against ``(n, 1)``, ``(1, m)`` and
``(1, 1)``.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "backward",
    "div",
    "div_by_detached",
    "heaviside_sigmoid",
    "heaviside_ste",
    "hinge_pos",
    "matmul",
    "mean",
    "min_elementwise",
    "min_matmul",
    "mul",
    "relu",
    "row_l2_normalize",
    "scalar_mul",
    "square",
    "stop_gradient",
    "sub",
    "sum",
    "tensor",
    "transpose",
]

_ids = itertools.count()
_local = threading.local()


@dataclass
class _Record:
    out_id: int
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered log of recorded operations.

    Use as a context manager to scope a fresh tape to one training step::

        with Tape():
            loss = ...
            backward(loss)
    """

    records: list = field(default_factory=list)
    _index: dict = field(default_factory=dict)

    def record(self, out: "Tensor", inputs: tuple, backward_fn) -> None:
        self._index[out.node_id] = len(self.records)
        self.records.append(_Record(out.node_id, inputs, backward_fn))

    def reset(self) -> None:
        self.records.clear()
        self._index.clear()

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = [Tape()]
    return _local.stack


def active_tape() -> Tape:
    """The innermost tape of the calling thread."""
    return _stack()[-1]


class Tensor:
    """Dense 2-D float64 array with a lazily allocated gradient."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"only 2-D tensors are supported, got ndim={arr.ndim}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id = next(_ids)
        self.tape: Optional[Tape] = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError("item() needs a single-element tensor")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    out = Tensor(values)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape = active_tape()
        out.tape = tape
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values
    return _result(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def div(a, b) -> Tensor:
    """Elementwise ``a / b`` with gradient flowing into both operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    av, bv = a.values, b.values
    out = av / bv

    def back(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)

    return _result(out, (a, b), back)


def div_by_detached(a, b) -> Tensor:
    """``a / sg(b)``: the denominator is treated as a constant."""
    return div(a, stop_gradient(_as_tensor(b)))


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.values * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    av = a.values
    return _result(av * av, (a,), lambda g: (2.0 * av * g,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.values > 0
    return _result(np.where(pos, a.values, 0.0), (a,), lambda g: (g * pos,))


def hinge_pos(a) -> Tensor:
    """``(x)_+``; the derivative at exactly zero is taken as 0."""
    return relu(a)


def min_elementwise(a, b) -> Tensor:
    """Elementwise minimum. Tied entries split the upstream gradient equally."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "min_elementwise")
    av, bv = a.values, b.values
    wa = np.where(av < bv, 1.0, np.where(av == bv, 0.5, 0.0))

    def back(g):
        return _unbroadcast(g * wa, a.shape), _unbroadcast(g * (1.0 - wa), b.shape)

    return _result(np.minimum(av, bv), (a, b), back)


# ---------------------------------------------------------------------------
# matrix ops and reductions


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def min_matmul(a, b) -> Tensor:
    """Matrix product with ``min`` in place of multiplication.

    ``out[i, j] = sum_p min(a[i, p], b[p, j])``. Used as the min-based
    logical-and when counting soft set intersections.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"min_matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av = a.values[:, :, None]
    bv = b.values[None, :, :]
    wa = np.where(av < bv, 1.0, np.where(av == bv, 0.5, 0.0))  # (n, p, m)

    def back(g):
        ga = (wa * g[:, None, :]).sum(axis=2)
        gb = ((1.0 - wa) * g[:, None, :]).sum(axis=0)
        return ga, gb

    return _result(np.minimum(av, bv).sum(axis=1), (a, b), back)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _result(a.values.T.copy(), (a,), lambda g: (g.T,))


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        out = np.array([[a.values.sum()]])
    elif axis in (0, 1):
        out = a.values.sum(axis=axis, keepdims=True)
    else:
        raise ContractError(f"sum: axis must be None, 0 or 1, got {axis}")
    return _result(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = _as_tensor(a)
    count = a.values.size if axis is None else a.shape[axis]
    return scalar_mul(sum(a, axis=axis), 1.0 / count)


def row_l2_normalize(a) -> Tensor:
    a = _as_tensor(a)
    norms = np.sqrt((a.values * a.values).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms[:, 0] == 0.0).tolist()
        raise DegenerateInputError(f"row_l2_normalize: zero-norm rows {rows}")
    y = a.values / norms

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _result(y, (a,), back)


# ---------------------------------------------------------------------------
# gradient surgery


def stop_gradient(a) -> Tensor:
    """Forward identity, contributes no gradient."""
    a = _as_tensor(a)
    return Tensor(a.values.copy())


def heaviside_ste(x, alpha: float) -> Tensor:
    """Exact step forward (1 where ``x >= 0``); backward multiplies by ``alpha``."""
    if not alpha > 0:
        raise ContractError(f"heaviside_ste: alpha must be positive, got {alpha}")
    x = _as_tensor(x)
    alpha = float(alpha)
    return _result((x.values >= 0).astype(np.float64), (x,), lambda g: (alpha * g,))


def heaviside_sigmoid(x, tau: float) -> Tensor:
    """Smooth step ``1 / (1 + exp(-x / tau))``, increasing in ``x``."""
    if not tau > 0:
        raise ContractError(f"heaviside_sigmoid: tau must be positive, got {tau}")
    x = _as_tensor(x)
    z = x.values / tau
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (x,), lambda g: (g * s * (1.0 - s) / tau,))


# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The tape is left intact, so calling twice doubles the gradients.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones((1, 1))
    if loss.is_leaf:
        _accumulate(loss, seed)
        return
    tape = loss.tape
    start = tape._index[loss.node_id]
    pending = {loss.node_id: seed}
    for rec in reversed(tape.records[: start + 1]):
        g = pending.pop(rec.out_id, None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                _accumulate(inp, gi)
            elif inp.node_id in pending:
                pending[inp.node_id] = pending[inp.node_id] + gi
            else:
                pending[inp.node_id] = gi


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.values)
    leaf.grad = leaf.grad + g
