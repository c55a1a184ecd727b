"""Hot kernels: compiled extension when built, pure Python otherwise.

Set ``LWSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from lwsim._kernels import _pykernels

if os.environ.get("LWSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from lwsim._kernels import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

airtime_ms = _impl.airtime_ms
UplinkTracker = _impl.UplinkTracker
EventQueue = _impl.EventQueue
BACKEND = "compiled" if _impl is not _pykernels else "python"

__all__ = ["airtime_ms", "UplinkTracker", "EventQueue", "BACKEND"]
