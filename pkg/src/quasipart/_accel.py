"""Selection between numba-compiled kernels and the plain numpy path.

Set ``QUASIPART_DISABLE_NUMBA=1`` before import to force the numpy path.
"""

import os

_FLAG = "QUASIPART_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(func):
    """Compile ``func`` in nopython mode when numba is present, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
