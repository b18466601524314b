"""Tensor and tape for tape-based reverse-mode differentiation.

Operations record themselves on the tape active in the current thread
(see :class:`Tape`). Nothing is recorded when no tape is active, so
inference code simply runs outside a ``with Tape():`` block.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from avsv.errors import TapeError

DEFAULT_DTYPE = np.float32

_local = threading.local()


class Tensor:
    """Dense n-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name, dtype=dtype)

    def reshape(self, *shape) -> "Tensor":
        from avsv.autodiff.ops import reshape

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from avsv.autodiff.ops import add

        return add(self, other)

    def __sub__(self, other):
        from avsv.autodiff.ops import add, scale

        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        from avsv.autodiff.ops import mul, scale

        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from avsv.autodiff.ops import matmul

        return matmul(self, other)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Usable as a context manager; the tape becomes the active recorder for the
    current thread inside the block. Side effects that must not race across
    data-parallel shards (batch-norm running statistics) are queued in
    ``deferred`` and applied by :meth:`commit`.
    """

    nodes: list = field(default_factory=list)
    frozen: bool = False
    deferred: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward) -> None:
        if self.frozen:
            raise TapeError("tape is frozen; call reset() before recording a new forward pass")
        self.nodes.append(Node(tuple(inputs), output, backward))

    def defer(self, fn: Callable[[], None]) -> None:
        self.deferred.append(fn)

    def commit(self) -> None:
        for fn in self.deferred:
            fn()
        self.deferred.clear()

    def reset(self) -> None:
        self.nodes.clear()
        self.deferred.clear()
        self.frozen = False

    def gradients(self, loss: Tensor) -> dict:
        """Return ``{id(leaf): (leaf, grad)}`` without touching ``.grad``.

        Freezes the tape. Intended for shard workers whose gradients are
        summed by a single owner.
        """
        leaves, _ = self._run(loss, assign_intermediate=False)
        return leaves

    def backward(self, loss: Tensor) -> None:
        leaves, _ = self._run(loss, assign_intermediate=True)
        for leaf, g in leaves.values():
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

    def _run(self, loss: Tensor, assign_intermediate: bool):
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.frozen:
            raise TapeError("backward already ran on this tape; reset() it first")
        self.frozen = True
        produced = {id(node.output) for node in self.nodes}
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = (loss, grads[id(loss)])
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            if assign_intermediate:
                node.output.grad = g
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in produced:
                    grads[key] = gi if key not in grads else grads[key] + gi
                else:
                    prev = leaves.get(key)
                    leaves[key] = (inp, gi if prev is None else prev[1] + gi)
        return leaves, grads


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every grad-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate additively; clear them with ``zero_grad``.
    """
    tape.backward(loss)


def record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record it when a tape is listening."""
    tape = active_tape()
    needs = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        tape.record(inputs, out, backward_fn)
    return out
