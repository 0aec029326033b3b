"""Numba switch.

Set ``CDMD_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba is
not importable the numpy path is used as well.
"""
import functools
import os

_FLAG = os.environ.get("CDMD_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None

HAVE_NUMBA = _nb is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(fn=None, **kwargs):
    """``numba.njit`` with cache/nogil defaults; identity when numba is absent."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    if fn is None:
        return functools.partial(njit, **kwargs)
    if not HAVE_NUMBA:
        return fn
    return _nb.njit(**opts)(fn)
