"""Parity between the compiled convolution backend and the numpy fallback."""

import numpy as np

from fkprior import _kernels
from fkprior._kernels import _conv_np


def test_backends_agree():
    rng = np.random.default_rng(29)
    for _ in range(20):
        hx, wx = rng.integers(5, 40, size=2)
        hk, wk = rng.integers(1, 6, size=2)
        hk, wk = min(hk, hx), min(wk, wx)
        x = rng.standard_normal((hx, wx))
        k = rng.standard_normal((hk, wk))
        g = rng.standard_normal((hx - hk + 1, wx - wk + 1))
        np.testing.assert_allclose(
            _kernels.conv2d_valid(x, k), _conv_np.conv2d_valid(x, k), atol=1e-12
        )
        np.testing.assert_allclose(
            _kernels.conv2d_valid_grad_input(g, k, hx, wx),
            _conv_np.conv2d_valid_grad_input(g, k, hx, wx),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            _kernels.conv2d_valid_grad_kernel(x, g, hk, wk),
            _conv_np.conv2d_valid_grad_kernel(x, g, hk, wk),
            atol=1e-12,
        )


def test_backend_name_is_reported():
    assert _kernels.BACKEND in ("compiled", "numpy")
