"""Optional numba acceleration.

Every hot kernel in this package is written twice: a numba ``@njit``
version and a plain numpy version.  Which one runs is decided here, once,
at import time:

* if numba imports cleanly and ``BELTPICK_NO_NUMBA`` is unset, kernels
  compile with numba;
* otherwise the pure-numpy fallbacks are used.

Both paths implement the same arithmetic, so results agree to floating
point noise (and bit-exactly for the forest, which is integer-threshold
driven).  ``benchmarks/bench_kernels.py`` times one against the other.
"""

import os

NUMBA_DISABLED = bool(os.environ.get("BELTPICK_NO_NUMBA"))

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled by BELTPICK_NO_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise.

    Accepts the same call styles as numba: ``@njit``, ``@njit()``, and
    ``@njit(cache=True, ...)``.
    """
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap
