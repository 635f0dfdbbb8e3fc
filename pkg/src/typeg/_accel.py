"""Optional numba acceleration.

Hot loops (GIG rejection sampling, sparse Cholesky, Takahashi recursion)
are written once in plain Python over numpy arrays and decorated with
:func:`jit`.  When numba is importable and ``TYPEG_DISABLE_JIT`` is unset
or ``0``, the decorator compiles them with ``numba.njit``; otherwise it
returns the function untouched so the same source runs in the interpreter.
"""

import os

_flag = os.environ.get("TYPEG_DISABLE_JIT", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba as _nb
except ImportError:  # pragma: no cover - exercised only without numba
    _nb = None

JIT_ENABLED = _nb is not None


def jit(func):
    """Compile ``func`` with numba when enabled, else return it as is."""
    if _nb is None:
        return func
    return _nb.njit(cache=True, nogil=True)(func)


def python_version(func):
    """Return the uncompiled Python implementation of a kernel."""
    return getattr(func, "py_func", func)
