"""Pure-numpy implementations of the 2-D convolution hot kernels.

Fallback backend used when the compiled extension is unavailable (or when
``FKPRIOR_PURE_PYTHON`` is set). Convolution is true convolution: the kernel
is flipped in both axes before the sliding product.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_valid(x, k):
    """Valid-mode 2-D convolution of ``x`` with kernel ``k`` (kernel flipped)."""
    windows = sliding_window_view(x, k.shape)
    return np.tensordot(windows, k[::-1, ::-1], axes=([2, 3], [0, 1]))


def conv2d_valid_grad_input(g, k, hx, wx):
    """Adjoint of ``conv2d_valid`` w.r.t. the input.

    ``g`` has the output shape; the result has shape ``(hx, wx)``.
    """
    kh, kw = k.shape
    gp = np.zeros((hx + kh - 1, wx + kw - 1), dtype=np.float64)
    gp[kh - 1 : kh - 1 + g.shape[0], kw - 1 : kw - 1 + g.shape[1]] = g
    windows = sliding_window_view(gp, k.shape)
    return np.tensordot(windows, k, axes=([2, 3], [0, 1]))


def conv2d_valid_grad_kernel(x, g, kh, kw):
    """Adjoint of ``conv2d_valid`` w.r.t. the kernel, shape ``(kh, kw)``."""
    windows = sliding_window_view(x, g.shape)
    out = np.tensordot(windows, g, axes=([2, 3], [0, 1]))
    return out[::-1, ::-1].copy()
