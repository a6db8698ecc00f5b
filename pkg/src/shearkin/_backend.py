"""Kernel backend selection.

Hot loops exist twice: a numba-compiled loop version and a vectorised numpy
version. ``SHEARKIN_BACKEND`` picks which one the public API dispatches to
("numba" or "numpy"); the default is numba when it can be imported.
"""

import os

ENV_VAR = "SHEARKIN_BACKEND"

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False


def _resolve():
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested in ("", "auto"):
        return "numba" if NUMBA_AVAILABLE else "numpy"
    if requested not in ("numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not NUMBA_AVAILABLE:
        raise ImportError(f"{ENV_VAR}=numba but numba is not installed")
    return requested


BACKEND = _resolve()


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged.

    The uncompiled loop version still runs (slowly) without numba, which keeps
    the loop kernels testable everywhere.
    """
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def pick(loop_impl, numpy_impl, backend=None):
    """Return the implementation matching ``backend`` (default: the active one)."""
    backend = BACKEND if backend is None else backend
    if backend == "numba":
        return loop_impl
    if backend == "numpy":
        return numpy_impl
    raise ValueError(f"unknown backend {backend!r}")
