"""Backend selection for the convolution hot kernels.

Prefers the compiled Cython extension; falls back to the numpy
implementation when the extension is not built or when the environment
variable ``FKPRIOR_PURE_PYTHON`` is set to a non-empty value. Both backends
implement the same three functions with identical semantics.
"""

import os

from . import _conv_np

if os.environ.get("FKPRIOR_PURE_PYTHON"):
    _impl = _conv_np
    BACKEND = "numpy"
else:
    try:
        from . import _convext as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _conv_np
        BACKEND = "numpy"


def _ascontig(a):
    import numpy as np

    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_valid(x, k):
    return _impl.conv2d_valid(_ascontig(x), _ascontig(k))


def conv2d_valid_grad_input(g, k, hx, wx):
    return _impl.conv2d_valid_grad_input(_ascontig(g), _ascontig(k), hx, wx)


def conv2d_valid_grad_kernel(x, g, kh, kw):
    return _impl.conv2d_valid_grad_kernel(_ascontig(x), _ascontig(g), kh, kw)
