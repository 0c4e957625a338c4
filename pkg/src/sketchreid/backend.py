"""Kernel backend selection: compiled extension if built, numpy fallback otherwise.

Set SKETCHREID_KERNELS=py to force the fallback (used by the benchmark and
the backend-equivalence tests).
"""

import os

from sketchreid import kernels_py

if os.environ.get("SKETCHREID_KERNELS", "").lower() == "py":
    _impl = kernels_py
else:
    try:
        from sketchreid import _kernels as _impl
    except ImportError:
        _impl = kernels_py

COMPILED = _impl.COMPILED

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
bilinear_forward = _impl.bilinear_forward
bilinear_coord_grad = _impl.bilinear_coord_grad


def backend_name():
    return "compiled" if COMPILED else "numpy"
