"""Hot convolution/pooling kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is selected. Set ``ADVDRIVE_KERNELS=python`` to force the fallback.
"""
import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:
    from . import _native
except ImportError:  # extension not built
    _native = None
else:
    BACKENDS["native"] = _native

if os.environ.get("ADVDRIVE_KERNELS", "").lower() == "python" or _native is None:
    BACKEND = "python"
else:
    BACKEND = "native"

_impl = BACKENDS[BACKEND]
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
