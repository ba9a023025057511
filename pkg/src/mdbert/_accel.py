"""Backend switch for the compiled kernels.

Set ``MDB_NUMBA=0`` to force the pure-numpy implementations even when numba
is importable. The flag is read once at import time.
"""

import os

try:
    import numba

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    _HAS_NUMBA = False

USE_NUMBA = _HAS_NUMBA and os.environ.get("MDB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it unchanged.

    Kernels are compiled without fastmath so that the summation order written
    in the loop is the order executed.
    """
    if not _HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)

