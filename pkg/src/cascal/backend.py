"""Numba / NumPy backend selection for the hot kernels.

The accelerated kernels in :mod:`cascal.kernels` exist in two flavours: a
numba ``@njit`` version and a pure-NumPy fallback.  Which one is bound to the
public kernel names is decided once, at import time:

* ``CASCAL_NUMBA=0`` (also ``false`` / ``off`` / ``no``) forces the NumPy
  fallback even when numba is installed.
* If numba is not importable the fallback is used silently.

Both paths compute the same quantities; they may differ in the last couple of
ulps because summation order differs.
"""

import os

_FALSY = {"0", "false", "off", "no"}

NUMBA_REQUESTED = os.environ.get("CASCAL_NUMBA", "1").strip().lower() not in _FALSY

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via CASCAL_NUMBA=0 runs
    numba = None
    HAS_NUMBA = False

NUMBA_ENABLED = NUMBA_REQUESTED and HAS_NUMBA


def jit(func):
    """Compile ``func`` with numba when available, regardless of the env flag.

    Used by the benchmark to time both paths side by side.  Raises
    ``RuntimeError`` when numba is missing.
    """
    if not HAS_NUMBA:
        raise RuntimeError("numba is not installed; only the NumPy path is available")
    return numba.njit(cache=True)(func)


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
