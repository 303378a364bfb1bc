"""Backend selection for the hot kernels.

Numba is used when importable unless ``TEXCOMPLETE_BACKEND=numpy`` is set in
the environment. The numpy path is a complete implementation, not a stub, and
both paths are tested against each other.
"""
import os

_requested = os.environ.get("TEXCOMPLETE_BACKEND", "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"
