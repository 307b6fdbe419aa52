"""Numba dispatch.

Hot kernels are written twice: an ``@njit`` loop version and a vectorised
numpy version. ``STEGSAN_DISABLE_NUMBA=1`` (or numba being absent) selects the
numpy path. The flag is read once at import time.
"""

import os
import warnings

_DISABLED = os.environ.get("STEGSAN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    _njit = None

USE_NUMBA = HAVE_NUMBA and not _DISABLED

if not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba is not installed - falling back to numpy kernels")


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator when numba is off."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
