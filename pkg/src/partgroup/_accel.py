"""Numba switch.

Set ``PARTGROUP_DISABLE_NUMBA=1`` to route every hot kernel through its
pure-numpy implementation. The flag is read once, at import time.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("PARTGROUP_DISABLE_NUMBA", "0").strip().lower() not in _FALSY
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
