"""Backend selection for the statistics kernels.

The compiled extension is preferred when importable; setting the
environment variable ``DDIT_NO_EXT=1`` forces the NumPy fallback (useful
for benchmarking one against the other, see ``ddit bench``). Both
backends compute identical quantities; they may differ only in float64
rounding from summation order.
"""

import os

import numpy as np

from . import _kernels_np

if os.environ.get("DDIT_NO_EXT", "") not in ("", "0"):
    _impl = _kernels_np
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cext"
    except ImportError:
        _impl = _kernels_np
        BACKEND = "numpy"


def backend_name():
    return BACKEND


def per_patch_std(field, edge, backend=None):
    """Dispatch per-patch std to the active (or an explicit) backend.

    ``field`` is converted to a C-contiguous float64 (H, W, C) array first,
    so both backends see bit-identical input.
    """
    arr = np.ascontiguousarray(field, dtype=np.float64)
    impl = _resolve(backend)
    return impl.per_patch_std(arr, edge)


def window_combine(stack, coeffs, backend=None):
    arr = np.ascontiguousarray(stack, dtype=np.float64)
    cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    impl = _resolve(backend)
    return impl.window_combine(arr, cf)


def _resolve(backend):
    if backend is None:
        return _impl
    if backend == "numpy":
        return _kernels_np
    if backend == "cext":
        if BACKEND != "cext":
            raise RuntimeError("compiled kernel extension is not available")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")
