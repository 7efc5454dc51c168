"""Tensor type and the define-by-run gradient tape."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class TapeError(RuntimeError):
    """Raised for invalid uses of the gradient tape."""


class ShapeError(ValueError):
    """Raised when tensor shapes do not compose."""


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = [Tape()]
    return stack


def current_tape() -> "Tape":
    return _stack()[-1]


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextmanager
def enable_grad():
    prev = grad_enabled()
    _local.grad_enabled = True
    try:
        yield
    finally:
        _local.grad_enabled = prev


@dataclass
class Node:
    op: str
    inputs: tuple
    output: "Tensor"
    vjp: Callable[["Tensor"], Sequence[Optional["Tensor"]]]


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations run, so every node's inputs were produced
    before it. ``backward`` walks the list in reverse and then clears it.
    Entering a tape as a context manager makes it the recording target for the
    current thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.generation = 0

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, node: Node) -> None:
        node.output._node = (self, self.generation, len(self.nodes))
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self.generation += 1

    def owns(self, t: "Tensor") -> bool:
        return t._node is not None and t._node[0] is self and t._node[1] == self.generation


class Tensor:
    """Dense float64 array with optional participation in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_retain", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = None
        self._retain = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._node = None
        out._retain = False
        return out

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar (implemented in ops) ---------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

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

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap a forward result and record it on the current tape when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out._retain = False
    out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        current_tape().record(Node(op, tuple(inputs), out, vjp))
    return out


def _accumulate(tape: Tape, seeds: dict, upto: int, create_graph: bool) -> dict:
    grads = dict(seeds)
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for idx in range(upto, -1, -1):
            node = tape.nodes[idx]
            g = grads.get(id(node.output))
            if g is None:
                continue
            in_grads = node.vjp(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise ShapeError(
                        f"{node.op}: gradient shape {ig.shape} does not match input {inp.shape}"
                    )
                key = id(inp)
                prev = grads.get(key)
                grads[key] = ig if prev is None else prev + ig
    return grads


def _locate(t: Tensor) -> tuple[Tape, int]:
    if not t.requires_grad or t._node is None:
        raise TapeError("loss is not on a tape (it does not depend on any requires_grad tensor)")
    tape, gen, idx = t._node
    if gen != tape.generation:
        raise TapeError("loss is not on a tape (its tape was already consumed)")
    return tape, idx


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` arrays. The tape that recorded
    ``loss`` is consumed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape, idx = _locate(loss)
    seed = Tensor(np.ones_like(loss.data))
    grads = _accumulate(tape, {id(loss): seed}, idx, create_graph=False)
    seen = set()
    for node in tape.nodes[: idx + 1]:
        for t in (*node.inputs, node.output):
            if id(t) in seen:
                continue
            seen.add(id(t))
            g = grads.get(id(t))
            if g is None:
                continue
            if t.is_leaf or t._retain:
                t.grad = g.data.copy() if t.grad is None else t.grad + g.data
    tape.reset()


def grad(outputs: Tensor, inputs: Sequence[Tensor], grad_output=None,
         create_graph: bool = False) -> list[Tensor]:
    """Vector-Jacobian product of ``outputs`` w.r.t. ``inputs``.

    The tape is left intact. With ``create_graph`` the returned tensors are
    themselves on the tape, which allows gradients of gradients.
    """
    tape, idx = _locate(outputs)
    if grad_output is None:
        if outputs.size != 1:
            raise ShapeError("grad_output is required for non-scalar outputs")
        grad_output = np.ones_like(outputs.data)
    seed = as_tensor(grad_output)
    grads = _accumulate(tape, {id(outputs): seed}, idx, create_graph=create_graph)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(Tensor(np.zeros_like(t.data)) if g is None else g)
    return result
