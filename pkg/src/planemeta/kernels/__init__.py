"""Hot-path kernels: 3D binary morphology and 2D bilinear resampling.

At import time the compiled Cython core is selected when present; the
pure-NumPy fallback is used otherwise. Set PLANEMETA_PURE_PYTHON=1 to force
the fallback (useful for benchmarking and debugging).

Both backends implement:
    erode3d(mask, radius)        -> uint8 array
    dilate3d(mask, radius)       -> uint8 array
    resize_bilinear(img, h, w)   -> float32 array
    rotate_bilinear(img, angle)  -> float32 array
"""

import os

from planemeta.kernels import _numpy

if os.environ.get("PLANEMETA_PURE_PYTHON", "").strip() in ("1", "true", "yes"):
    _impl = _numpy
else:
    try:
        from planemeta.kernels import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy

BACKEND = _impl.BACKEND
erode3d = _impl.erode3d
dilate3d = _impl.dilate3d
resize_bilinear = _impl.resize_bilinear
rotate_bilinear = _impl.rotate_bilinear


def backends() -> dict:
    """All importable backends, keyed by name. Used by tests and the
    benchmark command to compare implementations."""
    found = {"numpy": _numpy}
    try:
        from planemeta.kernels import _core

        found["compiled"] = _core
    except ImportError:
        pass
    return found
