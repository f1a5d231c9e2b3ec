"""Numba switch for the hot kernels.

Set ``RNNTLAB_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful for
debugging and for the kernel benchmark). When numba is not importable the
numpy paths are used automatically.
"""
import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAS_NUMBA = _numba is not None
USE_NUMBA = HAS_NUMBA and os.environ.get("RNNTLAB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(fn):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if not HAS_NUMBA:
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)
