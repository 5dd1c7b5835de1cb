"""Reverse-mode autodiff on numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced: its parent
tensors and a vector-Jacobian-product closure. `backward` walks the graph
in reverse topological order and accumulates gradients into the leaf
Parameters. Intermediate gradients live in a scratch map for the duration
of one backward call, so repeated backward calls accumulate only into
leaves (matching the zero_grad contract) and never double-count interior
nodes.

Training runs in float32; float64 is reserved for finite-difference
gradient checks, where 32-bit cancellation would drown the signal.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import UsageError

Array = np.ndarray


class Tensor:
    """A node in the computation graph.

    data is always a numpy float array (float32 or float64). grad is
    allocated lazily and only ever populated on leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        vjp: Optional[Callable[[Array], tuple]] = None,
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: Array = arr
        self.grad: Optional[Array] = None
        self._parents: tuple = tuple(parents)
        self._vjp = vjp
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self._parents
        )

    # -- introspection ------------------------------------------------------

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # -- graph helpers ------------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def accumulate_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- basic arithmetic (enough for losses and test rigs) -----------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data
        sd, od = self.data.shape, other.data.shape

        def vjp(g):
            return _unbroadcast(g, sd), _unbroadcast(g, od)

        return Tensor(out_data, parents=(self, other), vjp=vjp)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, parents=(self,), vjp=lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor(a * b, parents=(self, other), vjp=vjp)

    __rmul__ = __mul__

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        out = a ** exponent

        def vjp(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor(out, parents=(self,), vjp=vjp)

    def sum(self) -> "Tensor":
        a = self.data

        def vjp(g):
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

        return Tensor(np.asarray(a.sum(), dtype=a.dtype), parents=(self,), vjp=vjp)

    def mean(self) -> "Tensor":
        a = self.data
        n = a.size

        def vjp(g):
            return (np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=True),)

        return Tensor(np.asarray(a.mean(), dtype=a.dtype), parents=(self,), vjp=vjp)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self.data
        old = a.shape

        def vjp(g):
            return (g.reshape(old),)

        return Tensor(a.reshape(shape), parents=(self,), vjp=vjp)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ("trainable",)

    def __init__(self, data, dtype=None, trainable: bool = True):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter(shape={self.data.shape}, dtype={self.data.dtype.name})"


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _toposort(root: Tensor) -> list:
    order: list = []
    seen: set = set()
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad.

    loss must be a scalar. Leaves keep whatever gradient they already hold,
    so successive backward calls without zero_grad add up.
    """
    if loss.data.size != 1:
        raise UsageError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    order = _toposort(loss)
    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None or not node._parents:
            if node.requires_grad:
                node.accumulate_grad(g)
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
