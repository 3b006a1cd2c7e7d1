"""Hot numeric kernels with two interchangeable implementations.

The numba-compiled path is used by default; set QPA_NUMBA=0 to select the
pure-numpy fallback. Both paths produce bit-identical results (verified by
the parity test suite); `benchmarks/bench_kernels.py` compares their speed.
"""

from __future__ import annotations

import os

from . import numpy_impl

_flag = os.environ.get("QPA_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

if _want_numba:
    try:
        from . import numba_impl
    except ImportError:
        numba_impl = None
else:
    numba_impl = None

using_numba = numba_impl is not None
_active = numba_impl if using_numba else numpy_impl

gaussian_blur = _active.gaussian_blur
lbp_codes = _active.lbp_codes
block_histogram_hashes = _active.block_histogram_hashes
fnv_window_hashes = _active.fnv_window_hashes
count_equal_rows = _active.count_equal_rows
intersect_count_rows = _active.intersect_count_rows
pairwise_nn_positionwise = _active.pairwise_nn_positionwise
pairwise_nn_set = _active.pairwise_nn_set
affine_warp = _active.affine_warp

__all__ = [
    "using_numba",
    "numpy_impl",
    "numba_impl",
    "gaussian_blur",
    "lbp_codes",
    "block_histogram_hashes",
    "fnv_window_hashes",
    "count_equal_rows",
    "intersect_count_rows",
    "pairwise_nn_positionwise",
    "pairwise_nn_set",
    "affine_warp",
]
