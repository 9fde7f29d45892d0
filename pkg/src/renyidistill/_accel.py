"""Backend selection for the hot kernels.

Kernels are written twice: a loop version compiled with ``numba.njit`` and a
vectorised numpy version.  ``RENYIDISTILL_BACKEND=numpy`` forces the numpy path;
the default is numba whenever it imports.
"""

import contextlib
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_ENV_FLAG = "RENYIDISTILL_BACKEND"
_override = None


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


def backend():
    """Return the active backend name, ``"numba"`` or ``"numpy"``."""
    if _override is not None:
        return _override
    choice = os.environ.get(_ENV_FLAG, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{_ENV_FLAG} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAVE_NUMBA:
        return "numpy"
    return choice


def use_numba():
    return backend() == "numba"


@contextlib.contextmanager
def using_backend(name):
    """Temporarily force a backend (used by tests and the benchmark)."""
    global _override
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous = _override
    _override = name
    try:
        yield
    finally:
        _override = previous
