"""Optional numba acceleration.

Set ``SCHGAN_DISABLE_NUMBA=1`` (or any of ``true``/``yes``) to run every
kernel through its pure-numpy path. The flag is read once at import.
"""
import os

_flag = os.environ.get("SCHGAN_DISABLE_NUMBA", "").strip().lower()
DISABLED = _flag in {"1", "true", "yes", "on"}

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
    # the bundled TBB may be too old; workqueue needs nothing external
    numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func
        return decorator

USE_NUMBA = HAVE_NUMBA and not DISABLED


def set_threads(n):
    """Set the worker count used by parallel numba kernels (no-op otherwise)."""
    if n is None or n < 1:
        return
    if HAVE_NUMBA:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
