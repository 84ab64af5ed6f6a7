"""Backend switch for the compiled kernels.

The hot loops (trajectory integration, greedy power updates) exist twice:
a numba ``@njit`` version and a vectorised numpy version. Set the
environment variable ``CMKERNEL_NO_NUMBA=1`` before import to force the
numpy path, e.g. on platforms without numba.
"""
import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get("CMKERNEL_NO_NUMBA", "") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    if not _HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend():
    return "numba" if NUMBA_ENABLED else "numpy"
