"""Backend selection for the GRU recurrence kernels.

The compiled extension is used when it imports; set ``DRESNET_PURE_PYTHON=1``
to force the numpy fallback (handy for benchmarking and debugging).
"""
import os

from . import _gru_py

BACKEND = "python"
_impl = _gru_py

if not os.environ.get("DRESNET_PURE_PYTHON"):
    try:
        from . import _gru_ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _gru_py


def gru_scan(xw, u, h0):
    return _impl.gru_scan(xw, u, h0)


def gru_scan_backward(dhs, u, h0, hs, zs, rs, hcs):
    return _impl.gru_scan_backward(dhs, u, h0, hs, zs, rs, hcs)
