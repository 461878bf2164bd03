"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it together with a
vector-Jacobian product for each parent. Calling :meth:`Tensor.backward` on a
scalar walks the recorded graph in reverse topological order and accumulates
gradients into every node's `grad`.

Only the operations the uplift network and its losses need are provided.

Example:
    >>> x = Tensor(np.array([1.0, 2.0, 3.0]))
    >>> y = (x * x).sum()
    >>> y.backward()
    >>> x.grad.tolist()
    [2.0, 4.0, 6.0]
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Union

import numpy as np
from scipy.special import expit, log_expit

Operand = Union["Tensor", np.ndarray, float, int]
Vjp = Callable[[np.ndarray], Sequence[np.ndarray]]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node of the differentiation graph.

    Args:
        value: The array held by the node. Converted to float64.
        parents: Nodes this one was computed from.
        vjp: Maps the gradient of this node to one gradient per parent.
        name: Optional label, used for parameter leaves.
    """

    __slots__ = ("value", "grad", "name", "_parents", "_vjp")

    # Make numpy defer to the reflected operators, so `array - tensor` is a Tensor.
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray | float,
        parents: tuple[Tensor, ...] = (),
        vjp: Vjp | None = None,
        name: str | None = None,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = parents
        self._vjp = vjp

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __len__(self) -> int:
        return len(self.value)

    def item(self) -> float:
        return float(self.value.item())

    def __float__(self) -> float:
        return self.item()

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every node of the graph.

        Raises:
            ValueError: If `self` is not a scalar.
        """
        if self.value.size != 1:
            msg = f"backward() needs a scalar, got shape {self.shape}"
            raise ValueError(msg)
        order = self._topological_order()
        for node in order:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None:
                continue
            assert node.grad is not None
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                assert parent.grad is not None
                parent.grad = parent.grad + g

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in visited)
        return order

    # Operator sugar.

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Operand) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: Operand) -> Tensor:
        return matmul(self, other)

    def __rmatmul__(self, other: Operand) -> Tensor:
        return matmul(other, self)

    def __getitem__(self, index: object) -> Tensor:
        return index_select(self, index)

    def sum(self) -> Tensor:
        return sum_all(self)

    def mean(self) -> Tensor:
        return mean(self)


def as_tensor(x: Operand) -> Tensor:
    """Wrap a constant, or return `x` unchanged if it is already a Tensor."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# --------------------------------------------
# ------------ Elementwise binary ------------
# --------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / b.value**2, b.shape),
        ),
    )


def where(mask: np.ndarray, a: Operand, b: Operand) -> Tensor:
    """Select `a` where `mask` holds, else `b`.

    Unselected entries receive a zero gradient. Both branches must stay
    finite: a zero gradient times an infinite local derivative is still NaN.
    """
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return Tensor(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
    )


def matmul(a: Operand, b: Operand) -> Tensor:
    """Product of two matrices."""
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


# --------------------------------------------
# ------------ Elementwise unary -------------
# --------------------------------------------


def _unary(x: Operand, value: np.ndarray, local_grad: np.ndarray) -> Tensor:
    x = as_tensor(x)
    return Tensor(value, (x,), lambda g: (g * local_grad,))


def exp(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.value)
    return _unary(x, out, out)


def log(x: Operand) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.log(x.value), 1.0 / x.value)


def square(x: Operand) -> Tensor:
    x = as_tensor(x)
    return _unary(x, x.value**2, 2.0 * x.value)


def sigmoid(x: Operand) -> Tensor:
    x = as_tensor(x)
    s = expit(x.value)
    return _unary(x, s, s * (1.0 - s))


def softplus(x: Operand) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    return _unary(x, np.logaddexp(0.0, x.value), expit(x.value))


def log_sigmoid(x: Operand) -> Tensor:
    x = as_tensor(x)
    return _unary(x, log_expit(x.value), expit(-x.value))


def relu(x: Operand) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.maximum(x.value, 0.0), (x.value > 0).astype(np.float64))


def elu(x: Operand) -> Tensor:
    x = as_tensor(x)
    neg = np.expm1(np.minimum(x.value, 0.0))
    return _unary(
        x, np.where(x.value > 0, x.value, neg), np.where(x.value > 0, 1.0, neg + 1.0)
    )


def clamp_max(x: Operand, bound: float) -> Tensor:
    x = as_tensor(x)
    return _unary(
        x, np.minimum(x.value, bound), (x.value <= bound).astype(np.float64)
    )


# --------------------------------------------
# ---------- Reductions and shapes -----------
# --------------------------------------------


def sum_all(x: Operand) -> Tensor:
    x = as_tensor(x)
    return Tensor(
        np.sum(x.value), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),)
    )


def mean(x: Operand) -> Tensor:
    x = as_tensor(x)
    n = max(x.value.size, 1)
    return Tensor(
        np.mean(x.value) if x.value.size else np.float64(0.0),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
    )


def logsumexp(x: Operand) -> Tensor:
    """log(sum(exp(x))) over all elements, computed with max subtraction."""
    x = as_tensor(x)
    m = np.max(x.value)
    shifted = np.exp(x.value - m)
    total = shifted.sum()
    return Tensor(m + np.log(total), (x,), lambda g: (g * shifted / total,))


def log_softmax(x: Operand) -> Tensor:
    """Log of the softmax over all elements of a vector."""
    x = as_tensor(x)
    return sub(x, logsumexp(x))


def index_select(x: Operand, index: object) -> Tensor:
    """`x[index]` for basic or integer-array indexing."""
    x = as_tensor(x)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(x.value)
        np.add.at(out, index, g)  # type: ignore[call-overload]
        return (out,)

    return Tensor(x.value[index], (x,), vjp)  # type: ignore[index]


def take_rows(table: Operand, rows: np.ndarray) -> Tensor:
    """Embedding lookup: rows of a 2D table."""
    return index_select(table, np.asarray(rows, dtype=np.int64))


def concat(parts: Sequence[Operand], axis: int = 1) -> Tensor:
    """Concatenate tensors along `axis`."""
    tensors = tuple(as_tensor(p) for p in parts)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g: np.ndarray) -> list[np.ndarray]:
        return [
            np.take(g, np.arange(lo, hi), axis=axis)
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]

    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), tensors, vjp)
