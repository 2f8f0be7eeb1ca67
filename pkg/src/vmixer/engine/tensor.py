"""Tensor type, operation tape and reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.dtype = np.dtype(np.float32)
        self.tape = Tape()


@dataclass
class Node:
    """One recorded differentiable op."""

    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of executed ops. Inputs always precede their consumers."""

    nodes: list = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_state = _State()


def get_tape() -> Tape:
    return _state.tape


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def get_default_dtype() -> np.dtype:
    return _state.dtype


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the storage dtype used when tensors are created.

    Storage is float32 by default; gradient checking switches to float64 so the
    finite differences measure the derivative rather than rounding noise.
    """
    prev = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """Dense row-major array with an optional gradient.

    Tensors are treated as immutable once created; only ``grad`` is written,
    and only by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        dt = np.dtype(dtype) if dtype is not None else _state.dtype
        if arr.dtype != dt:
            arr = arr.astype(dt)
        self.data = _contiguous(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._node = None
        return t

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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # operator sugar; the implementations live in ops
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)


def _contiguous(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(out: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap an op's output and record it on the tape when a gradient is needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    """
    t = Tensor._wrap(_contiguous(np.asarray(out)))
    if _state.grad_enabled and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        node = Node(op, tuple(inputs), t, backward_fn)
        t._node = node
        _state.tape.record(node)
    return t


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Populate ``grad`` on every leaf reachable from ``loss``.

    Walks the tape in reverse, visiting each recorded op once. Leaves listed in
    ``params`` that the loss does not reach get a zero gradient. The tape is
    cleared afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    seed = np.ones_like(loss.data)
    try:
        if loss.is_leaf:
            if loss.requires_grad:
                loss.grad = seed if loss.grad is None else loss.grad + seed
        else:
            pending = {id(loss): seed}
            for node in reversed(tape.nodes):
                g = pending.pop(id(node.output), None)
                if g is None:
                    continue
                in_grads = node.backward(g)
                for inp, gi in zip(node.inputs, in_grads):
                    if gi is None or not inp.requires_grad:
                        continue
                    if gi.shape != inp.shape:
                        raise ShapeError(
                            f"internal: op {node.op} produced grad {gi.shape} for input {inp.shape}"
                        )
                    if inp.is_leaf:
                        gi = gi.astype(inp.data.dtype, copy=False)
                        inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                    else:
                        key = id(inp)
                        prev = pending.get(key)
                        pending[key] = gi if prev is None else prev + gi
    finally:
        tape.clear()
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
