"""Backend selection for the hot kernels.

Default is the numba @njit path; set DISGAUSS_NO_NUMBA=1 (or fail to import
numba) to fall back to the pure-numpy implementations. Both expose the same
functions: composite_forward, composite_backward, farthest_point_sample.
`benchmarks/bench_kernels.py` times the two side by side.
"""

from __future__ import annotations

import os

from . import numpy_impl

_env = os.environ.get("DISGAUSS_NO_NUMBA", "").strip().lower()
_want_numba = _env not in ("1", "true", "yes")

if _want_numba:
    try:
        from . import numba_impl as _backend
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba
        _backend = numpy_impl
        USING_NUMBA = False
else:
    _backend = numpy_impl
    USING_NUMBA = False

composite_forward = _backend.composite_forward
composite_backward = _backend.composite_backward
farthest_point_sample = _backend.farthest_point_sample
sinkhorn_forward = _backend.sinkhorn_forward
sinkhorn_backward = _backend.sinkhorn_backward

BACKEND_NAME = "numba" if USING_NUMBA else "numpy"
