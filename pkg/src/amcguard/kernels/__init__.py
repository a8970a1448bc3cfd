"""Hot-kernel backend selection.

The compiled extension (`amcguard.kernels._fast`) is preferred when it
imported cleanly; otherwise the numpy fallback is used. Set
AMCGUARD_KERNELS=numpy or AMCGUARD_KERNELS=c to force one side (forcing
"c" when the extension is missing is an import error, not a silent
fallback).
"""

import os

from . import numpy_backend

try:
    from . import _fast  # type: ignore[attr-defined]
except ImportError:
    _fast = None

_choice = os.environ.get("AMCGUARD_KERNELS", "auto")
if _choice == "numpy":
    _impl = numpy_backend
elif _choice == "c":
    if _fast is None:
        raise ImportError(
            "AMCGUARD_KERNELS=c but the compiled kernel extension is not available; "
            "rebuild with `pip install -e .` (without AMCGUARD_NO_EXT)"
        )
    _impl = _fast
elif _choice == "auto":
    _impl = _fast if _fast is not None else numpy_backend
else:
    raise ImportError(f"unknown AMCGUARD_KERNELS value: {_choice!r}")

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def backend_name() -> str:
    return _impl.NAME


def available_backends():
    out = [numpy_backend.NAME]
    if _fast is not None:
        out.append(_fast.NAME)
    return out
