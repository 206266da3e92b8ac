"""Numba toggle.

Hot kernels are written twice: an explicit-loop version compiled with
``numba.njit`` and a vectorised numpy version.  Which one the public
functions dispatch to is decided once at import time:

* ``MLRDYN_DISABLE_NUMBA=1`` forces the numpy path,
* otherwise numba is used when it can be imported.
"""

import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _have_numba():
    try:
        import numba  # noqa: F401

        return True
    except ImportError:
        return False


HAVE_NUMBA = _have_numba()
USE_NUMBA = HAVE_NUMBA and os.environ.get("MLRDYN_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
