"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np


def resample_axis(src: np.ndarray, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Resample each row of ``src`` with a (n_out, n_taps) tap table.

    Taps are accumulated one at a time in index order so the floating-point
    result matches the compiled loop exactly.
    """
    out = np.zeros((src.shape[0], idx.shape[0]), dtype=np.float64)
    for t in range(idx.shape[1]):
        out += weights[:, t] * src[:, idx[:, t]]
    return out
