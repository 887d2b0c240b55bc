"""Named parameter storage, freezing, and SGD with momentum."""

from __future__ import annotations

import hashlib
from typing import Iterable, Iterator

import numpy as np

from .tensor import Tensor


class UnknownParameter(KeyError):
    pass


class ParamRegistry:
    """Ordered name -> Tensor map plus the set of frozen names.

    Freezing clears ``requires_grad`` so frozen tensors never receive a
    gradient and the optimizer skips them.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray, dtype=None) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        tensor = Tensor(np.array(value, dtype=dtype, copy=True), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise UnknownParameter(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def freeze(self, names: Iterable[str]) -> "ParamRegistry":
        names = list(names)
        missing = [n for n in names if n not in self._params]
        if missing:
            raise UnknownParameter(", ".join(missing))
        for name in names:
            self._params[name].requires_grad = False
            self.frozen.add(name)
        return self

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self._params.items() if n not in self.frozen}

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        from .tensor import ShapeMismatch

        if strict and set(arrays) != set(self._params):
            extra = sorted(set(arrays) ^ set(self._params))
            raise ShapeMismatch(f"weight names do not match the model: {extra[:5]}")
        for name, arr in arrays.items():
            if name not in self._params:
                continue
            tensor = self._params[name]
            if arr.shape != tensor.shape:
                raise ShapeMismatch(f"{name}: stored shape {arr.shape} vs model shape {tensor.shape}")
            tensor.data = np.array(arr, dtype=tensor.dtype, copy=True)

    def digest(self, names: Iterable[str] | None = None) -> str:
        h = hashlib.sha256()
        for name in sorted(self._params if names is None else names):
            arr = self._params[name].data
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


class SGD:
    """v <- momentum * v + g ;  p <- p - lr * v, for non-frozen parameters only."""

    def __init__(self, registry: ParamRegistry, lr: float, momentum: float = 0.9):
        self.registry = registry
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            if name in self.registry.frozen:
                continue
            param = self.registry[name]
            v = self.velocity.get(name)
            v = grad.astype(param.dtype) if v is None else self.momentum * v + grad
            self.velocity[name] = v.astype(param.dtype, copy=False)
            if self.lr:
                param.data = param.data - param.dtype.type(self.lr) * self.velocity[name]
