"""Hot-kernel backend selection.

The jit backend (numba) is the default when numba imports cleanly; the
pure-numpy fallback can be forced with AQPCAL_BACKEND=numpy.  Both backends
expose the same functions and, outside the neural layers, produce
bit-identical results.  AQP_THREADS caps the jit backend's thread pool.
"""

from __future__ import annotations

import os

_requested = os.environ.get("AQPCAL_BACKEND", "auto").strip().lower()

if _requested in ("auto", ""):
    try:
        from . import numba_impl as _impl
    except ImportError:
        from . import numpy_impl as _impl
elif _requested == "numba":
    from . import numba_impl as _impl
elif _requested == "numpy":
    from . import numpy_impl as _impl
else:
    raise RuntimeError(
        f"AQPCAL_BACKEND={_requested!r} not understood; use 'numba' or 'numpy'"
    )

if _impl.BACKEND == "numba":
    import numba

    _cap = os.environ.get("AQP_THREADS", "").strip()
    if _cap:
        numba.set_num_threads(max(1, min(int(_cap), numba.config.NUMBA_NUM_THREADS)))

BACKEND = _impl.BACKEND

random_keys = _impl.random_keys
gen_uniform = _impl.gen_uniform
gen_gaussian = _impl.gen_gaussian
gen_diagonal = _impl.gen_diagonal
gen_sierpinski = _impl.gen_sierpinski
gen_bit = _impl.gen_bit
gen_parcel = _impl.gen_parcel
count_in_box = _impl.count_in_box
histogram_counts = _impl.histogram_counts
sort_by_cell = _impl.sort_by_cell
grid_count = _impl.grid_count
sample_counts = _impl.sample_counts
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
