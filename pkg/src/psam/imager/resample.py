"""Separable Lanczos resampling of 8-bit grids.

Weights follow the usual convention for pixel-centred sampling: output pixel
``i`` is centred at ``(i + 0.5) * scale`` in input coordinates, and when
shrinking the kernel is widened by the scale factor so it also low-passes.
Out-of-range taps read the nearest edge pixel. All arithmetic is float64 and
the final value is rounded half-to-even before clamping to [0, 255].
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import _backend

LANCZOS_A = 3


class EmptyImage(ValueError):
    pass


def lanczos_kernel(x: float, a: int = LANCZOS_A) -> float:
    """sinc(x) * sinc(x / a) on (-a, a), exactly 1 at 0 and exactly 0 at other integers."""
    if x == 0.0:
        return 1.0
    if abs(x) >= a:
        return 0.0
    if x == math.floor(x):
        return 0.0
    px = math.pi * x
    return a * math.sin(px) * math.sin(px / a) / (px * px)


@lru_cache(maxsize=256)
def tap_table(in_size: int, out_size: int, a: int = LANCZOS_A) -> tuple[np.ndarray, np.ndarray]:
    """Clamped source indices and normalized weights, both shaped (out_size, n_taps)."""
    if in_size < 1 or out_size < 1:
        raise EmptyImage(f"cannot resample {in_size} -> {out_size}")
    scale = in_size / out_size
    filterscale = max(scale, 1.0)
    support = a * filterscale
    n_taps = 2 * math.ceil(support) + 1
    idx = np.empty((out_size, n_taps), dtype=np.int64)
    weights = np.empty((out_size, n_taps), dtype=np.float64)
    for i in range(out_size):
        center = (i + 0.5) * scale
        first = math.floor(center - 0.5) - math.ceil(support)
        row = [lanczos_kernel((first + t + 0.5 - center) / filterscale, a) for t in range(n_taps)]
        total = math.fsum(row)
        for t in range(n_taps):
            weights[i, t] = row[t] / total
            idx[i, t] = min(max(first + t, 0), in_size - 1)
    idx.setflags(write=False)
    weights.setflags(write=False)
    return idx, weights


def _pass(lines: np.ndarray, out_size: int, resample_axis) -> np.ndarray:
    idx, weights = tap_table(lines.shape[1], out_size)
    return resample_axis(np.ascontiguousarray(lines, dtype=np.float64), idx, weights)


def resample_float(grid: np.ndarray, out_w: int, out_h: int, resample_axis=None) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) array and return unrounded float64 values."""
    resample_axis = resample_axis or _backend.resample_axis
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise EmptyImage(f"cannot resize grid of shape {arr.shape}")
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    planes = arr.transpose(2, 0, 1)  # (C, H, W)
    horiz = _pass(planes.reshape(c * h, w), out_w, resample_axis).reshape(c, h, out_w)
    vert_in = horiz.transpose(0, 2, 1).reshape(c * out_w, h)
    vert = _pass(vert_in, out_h, resample_axis).reshape(c, out_w, out_h)
    out = vert.transpose(2, 1, 0)
    return out[:, :, 0] if squeeze else out


def resize_lanczos(grid: np.ndarray, out_w: int, out_h: int, resample_axis=None) -> np.ndarray:
    """Lanczos-3 resize of an 8-bit grid to ``out_h`` rows by ``out_w`` columns."""
    values = resample_float(grid, out_w, out_h, resample_axis)
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)
