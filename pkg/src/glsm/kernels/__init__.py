"""Backend selection for the hot per-step kernels.

Two interchangeable implementations exist: numba-jitted loops
(``_numba``) and pure-numpy vector code (``_numpy``).  The env var
``GLSM_BACKEND`` picks one ("numba" / "numpy"); default is numba with a
silent fallback to numpy when numba is unavailable.  Both backends
produce bit-identical arrays (same arithmetic, same evaluation order),
which the test suite asserts.
"""

import os

from . import _numpy as _numpy_impl

_requested = os.environ.get("GLSM_BACKEND", "numba").strip().lower()

if _requested == "numpy":
    _impl = _numpy_impl
    BACKEND = "numpy"
elif _requested == "numba":
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = _numpy_impl
        BACKEND = "numpy"
else:
    raise ValueError(f"GLSM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

basis_matrix = _impl.basis_matrix
assemble_matrix = _impl.assemble_matrix


def set_num_threads(n):
    """Cap kernel worker threads; no-op on the numpy backend."""
    if BACKEND == "numba":
        import numba

        numba.set_num_threads(max(1, int(n)))


def get_impl(name):
    """Fetch a specific backend module ("numba" or "numpy") for benchmarks."""
    if name == "numpy":
        return _numpy_impl
    if name == "numba":
        from . import _numba

        return _numba
    raise ValueError(name)
