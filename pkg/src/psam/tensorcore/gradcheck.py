"""Central finite-difference verification of :func:`backward`."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ComputationRecord, Tensor, backward

SKIPPED = "skipped"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by ~0."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict[str, float | str]:
    """Compare backward() against (f(p + h e_i) - f(p - h e_i)) / 2h.

    ``f`` re-evaluates the loss from the current parameter values. Frozen
    parameters (``requires_grad`` false) are reported as ``"skipped"``. With
    ``max_entries`` set, larger tensors are checked on that many entries,
    drawn with ``seed``, always including the entry with the largest
    analytic gradient.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for tensor in params.values():
        tensor.grad = None
    with ComputationRecord() as rec:
        loss = f()
    backward(rec, loss)
    rng = np.random.default_rng(seed)

    report: dict[str, float | str] = {}
    for name, tensor in params.items():
        if not tensor.requires_grad:
            report[name] = SKIPPED
            continue
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        size = flat.size
        if max_entries is None or size <= max_entries:
            entries = np.arange(size)
        else:
            top = int(np.argmax(np.abs(analytic).reshape(-1)))
            rest = rng.choice(size, size=max_entries - 1, replace=False)
            entries = np.unique(np.concatenate([[top], rest]))
        numeric = np.empty(len(entries))
        for pos, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric[pos] = (up - down) / (2 * h)
        err = relative_error(analytic.reshape(-1)[entries], numeric, floor)
        report[name] = float(err.max()) if err.size else 0.0
    for tensor in params.values():
        tensor.grad = None
    return report
