"""Pick the compiled kernels when importable, otherwise the numpy fallback.

Set ``PSAM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("PSAM_PURE_PYTHON") != "1":
    BACKEND = "cython"
    resample_axis = _compiled.resample_axis
else:
    BACKEND = "python"
    resample_axis = _fallback.resample_axis


def available_backends() -> dict:
    backends = {"python": _fallback.resample_axis}
    if _compiled is not None:
        backends["cython"] = _compiled.resample_axis
    return backends
