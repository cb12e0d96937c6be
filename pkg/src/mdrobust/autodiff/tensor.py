"""Tensor type and the reverse-mode tape."""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """An operation was invoked outside its documented contract."""


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    Values are stored as a row-major ``numpy.ndarray``. A tensor created by an
    operation on inputs that require gradients keeps a reference to the
    :class:`Node` that produced it, which is how :func:`backward` rebuilds the
    tape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        data = np.array(values, dtype=np.float64, order="C", copy=True)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64, order="C")
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        """Share values, drop graph history and gradient tracking."""
        return Tensor._wrap(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # A small operator surface; the heavy ops live in ``ops``.
    def __add__(self, other):
        from .ops import add

        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        from .ops import mul

        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul

        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def sum(self):
        from .ops import tsum

        return tsum(self)

    def reshape(self, *shape):
        from .ops import reshape

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _scalar_error(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    """One recorded primitive: its inputs, its output and the vector-Jacobian product.

    The output is held weakly so a graph is freed by reference counting as soon
    as its root goes out of scope.
    """

    op: str
    inputs: tuple[Tensor, ...]
    output_ref: weakref.ref
    output_id: int
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def output(self) -> Tensor | None:
        return self.output_ref()


@dataclass
class Tape:
    """Operations reachable from a root tensor, in topological order."""

    nodes: list[Node] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Node] = []
        seen: set[int] = set()
        # iterative post-order DFS; networks here are deep enough to hit recursion limits
        stack: list[tuple[Node, bool]] = []
        if root._node is not None:
            stack.append((root._node, False))
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for inp in node.inputs:
                if inp._node is not None and id(inp._node) not in seen:
                    stack.append((inp._node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def is_topological(self) -> bool:
        position = {n.output_id: i for i, n in enumerate(self.nodes)}
        for i, node in enumerate(self.nodes):
            for inp in node.inputs:
                j = position.get(id(inp))
                if j is not None and j >= i:
                    return False
        return True


def make_result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap ``data`` and record a node if any input tracks gradients."""
    track = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=track)
    if track:
        out._node = Node(op, inputs, weakref.ref(out), id(out), vjp)
    return out


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf tensor.

    Gradients add onto any existing ``grad`` buffer, so callers zero them
    between steps. Returns the tape that was replayed.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring gradients")
    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g_out = grads.pop(node.output_id, None)
        if g_out is None:
            continue
        in_grads = node.vjp(g_out)
        for inp, g in zip(node.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
            else:
                key = id(inp)
                grads[key] = g if key not in grads else grads[key] + g
    if loss._node is None:
        loss.grad = np.ones_like(loss.data)
    return tape
