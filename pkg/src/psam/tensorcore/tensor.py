"""Tensors and the reverse-mode computation record.

Operations only record themselves while a :class:`ComputationRecord` is
active on the current thread::

    with ComputationRecord() as rec:
        loss = model(x)
    grads = backward(rec, loss)

Outside a record the same operations run as plain numpy forward passes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalarLoss(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "node_id", "grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: int | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operator sugar; the real implementations live in ops
    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class ComputationRecord:
    """Ordered list of primitive applications; ordering is topological by construction."""

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "ComputationRecord":
        stack = self._stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        self._stack().pop()

    @classmethod
    def _stack(cls) -> list:
        if not hasattr(cls._local, "stack"):
            cls._local.stack = []
        return cls._local.stack

    @classmethod
    def active(cls) -> "ComputationRecord | None":
        stack = cls._stack()
        return stack[-1] if stack else None

    def __len__(self):
        return len(self.nodes)


def record_op(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out`` in a Tensor and, if any input needs a gradient, append a node."""
    rec = ComputationRecord.active()
    needs = rec is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    if needs:
        result.node_id = len(rec.nodes)
        rec.nodes.append(Node(op, tuple(inputs), result, backward_fn))
    return result


def backward(record: ComputationRecord, loss: Tensor) -> dict[str, np.ndarray]:
    """Propagate d(loss) back through ``record``.

    Every leaf tensor with ``requires_grad`` that the loss depends on gets its
    ``.grad`` set; the returned mapping holds the named ones. Frozen tensors
    have ``requires_grad=False`` and therefore never appear.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise NotScalarLoss(f"loss must be a 0-d scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if not loss.requires_grad:
        return {}
    grads[id(loss)] = np.ones_like(loss.data)
    produced = {id(node.output) for node in record.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(record.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise ShapeMismatch(f"{node.op}: gradient shape {gi.shape} != input shape {inp.shape}")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp

    named: dict[str, np.ndarray] = {}
    for key, tensor in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        tensor.grad = g.astype(tensor.dtype, copy=False)
        if tensor.name is not None:
            named[tensor.name] = tensor.grad
    return named
