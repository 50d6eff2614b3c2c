"""Reverse-mode autodiff over dense numpy arrays.

Define-by-run: every differentiable op attaches a Node to its output, and
``backward`` replays the recorded graph in reverse topological order. The
graph is rebuilt from scratch on every call (per training step), there is no
retained global state.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class Node:
    """One recorded operation: inputs, and how to push gradients back."""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Sequence["Tensor"],
                 backward_fn: Callable[[np.ndarray], Sequence]):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tensor:
    """n-d array participating in the autodiff graph.

    ``data`` is always a numpy array (float32 by default; gradient-check
    suites build float64 tensors and every op preserves dtype).
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        was_array = isinstance(data, (np.ndarray, np.generic))
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating) or not was_array:
            # python scalars/lists default to float32 so they do not promote
            # single-precision pipelines; ndarray dtypes are preserved
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operator sugar (implemented in ops.py, bound at import) -------
    def backward(self):
        backward(self)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def record(op: str, out: Tensor, inputs: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Sequence]) -> Tensor:
    """Attach a Node to ``out`` when grads are on and any input needs them."""
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward_fn)
    return out


class Tape:
    """Ordered list of recorded operations, topologically sorted.

    Built by tracing ancestors of one or more root tensors; every node's
    inputs precede it, and backward traversal visits each node exactly once.
    """

    __slots__ = ("nodes", "order")

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, roots: Iterable[Tensor]) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(r, False) for r in roots]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t.node.inputs:
                if parent.node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def _accumulate(t: Tensor, g: np.ndarray):
    if g.shape != t.data.shape:
        raise ShapeError(
            f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def backward_from(roots: Sequence[Tensor], root_grads: Sequence[np.ndarray]
                  ) -> dict[int, np.ndarray]:
    """Seed arbitrary output tensors with gradients and run the chain rule.

    Returns a map from ``id(tensor)`` to accumulated gradient for every
    tensor reached (leaves keep theirs in ``.grad`` as well).
    """
    tape = Tape.trace(roots)
    for t, g in zip(roots, root_grads):
        _accumulate(t, np.asarray(g, dtype=t.data.dtype))
    reached: dict[int, np.ndarray] = {}
    for t in reversed(tape.nodes):
        if t.grad is None:
            continue
        grads = t.node.backward_fn(t.grad)
        for parent, g in zip(t.node.inputs, grads):
            if g is None:
                continue
            if parent.requires_grad or parent.node is not None:
                _accumulate(parent, g)
        reached[id(t)] = t.grad
        if t.node is not None:
            t.grad = None  # free intermediate gradients
    return reached


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar loss; returns {leaf tensor: gradient}.

    Every ``requires_grad`` leaf reachable from ``loss`` ends up with its
    gradient in ``.grad`` (accumulating additively across calls and fan-out).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None and not loss.requires_grad:
        return {}
    seed = np.ones_like(loss.data)
    tape = Tape.trace([loss])
    _accumulate(loss, seed)
    leaves: dict[Tensor, np.ndarray] = {}
    for t in reversed(tape.nodes):
        if t.grad is None:
            continue
        grads = t.node.backward_fn(t.grad)
        for parent, g in zip(t.node.inputs, grads):
            if g is None:
                continue
            if parent.requires_grad or parent.node is not None:
                _accumulate(parent, g)
                if parent.node is None and parent.requires_grad:
                    leaves[parent] = parent.grad
        if t.node is not None and t is not loss:
            t.grad = None
    if loss.node is None:
        leaves[loss] = loss.grad
    return leaves
