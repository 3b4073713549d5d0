"""Hot loops: scoring, gradient accumulation, optimizer steps and PAV.

Two interchangeable backends share one call signature. The numba one is used
unless ``KGCAL_NO_NUMBA`` is set to a truthy value (or numba is missing), in
which case the vectorized numpy one is used. Both are importable directly as
``kernels.numpy_impl`` / ``kernels.numba_impl`` for benchmarking and
cross-checking.
"""
import os

from . import numpy_impl

TRANSE, TRANSH, DISTMULT, COMPLEX = 0, 1, 2, 3
MARGIN, BCE = 0, 1

_disabled = os.environ.get("KGCAL_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("disabled by KGCAL_NO_NUMBA")
    from . import numba_impl
    HAS_NUMBA = True
except ImportError:
    numba_impl = None
    HAS_NUMBA = False

backend = numba_impl if HAS_NUMBA else numpy_impl
BACKEND_NAME = "numba" if HAS_NUMBA else "numpy"

__all__ = [
    "TRANSE", "TRANSH", "DISTMULT", "COMPLEX", "MARGIN", "BCE",
    "backend", "BACKEND_NAME", "HAS_NUMBA", "numpy_impl", "numba_impl",
]
