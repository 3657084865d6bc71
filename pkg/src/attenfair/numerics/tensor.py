"""Graph node type for reverse-mode differentiation.

A :class:`Tensor` wraps an immutable float64 array. Operations in
:mod:`attenfair.numerics.ops` build new nodes that remember their parents
together with a local vector-Jacobian rule; :meth:`Tensor.backward` walks
the graph once in reverse topological order and accumulates gradients.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

BackwardFn = Callable[[np.ndarray], np.ndarray]


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or infinity."""


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by '{op or 'input'}'")


class Tensor:
    """Dense float64 array with an optional gradient accumulator.

    Args:
        data: array-like value. It is copied and frozen.
        requires_grad: whether gradients should flow to this node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "")
        arr.flags.writeable = False
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple[Tuple["Tensor", BackwardFn], ...] = ()
        self.op = "leaf"

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence[Tuple["Tensor", BackwardFn]],
        op: str,
    ) -> "Tensor":
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, op)
        data.flags.writeable = False
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        live = tuple((p, fn) for p, fn in parents if p.requires_grad)
        out.requires_grad = bool(live)
        out._parents = live
        out.op = op
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- differentiation --------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor.

        ``grad`` defaults to 1 and may only be omitted for single-element
        outputs. Gradients from repeated backward calls add up on leaves.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(f"seed gradient dims {list(grad.shape)} != {self.dims}")

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._parents:
                node.grad = g
            else:
                node.grad = g if node.grad is None else node.grad + g
            for parent, rule in node._parents:
                pg = rule(g)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar (implemented in ops) ------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops

        return ops.reduce(self, axis, "sum")

    def mean(self, axis=None):
        from . import ops

        return ops.reduce(self, axis, "mean")


def _topological_order(root: Tensor) -> list:
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
