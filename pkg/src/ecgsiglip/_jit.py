"""Numba switch.

Set ``ECGSIGLIP_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
import os

_FLAG = os.environ.get("ECGSIGLIP_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it untouched."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)
