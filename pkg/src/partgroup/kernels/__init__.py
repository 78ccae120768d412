"""Hot kernels, dispatched to numba or numpy according to ``PARTGROUP_DISABLE_NUMBA``.

Both backends are importable explicitly (``kernels.numpy_impl`` and, when
numba is installed, ``kernels.numba_impl``) so they can be compared.
"""
from .. import _accel
from . import _np as numpy_impl

if _accel.HAVE_NUMBA:
    from . import _nb as numba_impl
else:  # pragma: no cover
    numba_impl = None

_active = numba_impl if _accel.USE_NUMBA else numpy_impl

scan_lines = _active.scan_lines
group_lines = _active.group_lines
nms_suppress = _active.nms_suppress
greedy_match = _active.greedy_match

BACKENDS = {"numpy": numpy_impl}
if numba_impl is not None:
    BACKENDS["numba"] = numba_impl

__all__ = ["scan_lines", "group_lines", "nms_suppress", "greedy_match", "BACKENDS",
           "numpy_impl", "numba_impl"]
