"""Kernel backend selection.

Every hot loop ships twice: a numba ``@njit`` kernel and a pure-numpy
fallback that vectorises across paths in lockstep. The backend is fixed at
import time from ``BOUNDARYWALK_BACKEND`` (``numba`` by default, ``numpy`` to
bypass compilation). Both kernels are always importable so that benchmarks
can compare them in one process.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKEND = os.environ.get("BOUNDARYWALK_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"BOUNDARYWALK_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and BACKEND == "numba"


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def pick(numba_impl, numpy_impl, backend: str | None = None):
    """Return the implementation for ``backend`` (default: the process backend)."""
    name = backend or ("numba" if USE_NUMBA else "numpy")
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return numba_impl
    return numpy_impl
