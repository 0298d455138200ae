"""Hot numeric kernels with a numba and a pure numpy implementation.

The active backend is chosen once at import time from the environment
variable STEREOTRACK_BACKEND:

    auto   use numba when importable, else numpy (default)
    numba  require numba, fail if it cannot be imported
    numpy  force the pure numpy fallback

Both implementations produce identical results; benchmarks/bench_kernels.py
compares their speed.
"""

import logging
import os

LOGGER = logging.getLogger("stereotrack.kernels")

_REQUESTED = os.environ.get("STEREOTRACK_BACKEND", "auto").strip().lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"STEREOTRACK_BACKEND must be auto, numba or numpy, got {_REQUESTED!r}"
    )

if _REQUESTED in ("auto", "numba"):
    try:
        from stereotrack.kernels import _numba as _impl

        ACTIVE_BACKEND = "numba"
    except ImportError:
        if _REQUESTED == "numba":
            raise
        from stereotrack.kernels import _numpy as _impl

        ACTIVE_BACKEND = "numpy"
        LOGGER.info("numba not importable, using numpy kernels")
else:
    from stereotrack.kernels import _numpy as _impl

    ACTIVE_BACKEND = "numpy"

raycast_boxes = _impl.raycast_boxes
bilinear_sample = _impl.bilinear_sample
bilinear_sample_grad = _impl.bilinear_sample_grad
nn_match = _impl.nn_match

__all__ = [
    "ACTIVE_BACKEND",
    "bilinear_sample",
    "bilinear_sample_grad",
    "nn_match",
    "raycast_boxes",
]
