"""Degradation pipeline tests against triple-loop and finite-difference oracles."""

import numpy as np
import pytest

from fkprior import degrade as dg
from fkprior import diffcore as dc
from fkprior import kernelgen as kg
from fkprior.errors import InputError


def oracle_degrade(x, k, s):
    """Direct nested-loop replicate-pad true-convolution stride-s reference."""
    side = k.shape[0]
    pad = side // 2
    h, w = x.shape
    oh, ow = (h + s - 1) // s, (w + s - 1) // s
    y = np.zeros((oh, ow))
    for oi in range(oh):
        for oj in range(ow):
            c, d = oi * s, oj * s
            acc = 0.0
            for u in range(side):
                for v in range(side):
                    src_i = min(max(c + u - pad, 0), h - 1)
                    src_j = min(max(d + v - pad, 0), w - 1)
                    acc += x[src_i, src_j] * k[side - 1 - u, side - 1 - v]
            y[oi, oj] = acc
    return y


def delta_kernel(side):
    k = np.zeros((side, side))
    k[side // 2, side // 2] = 1.0
    return k


def test_matches_triple_loop_oracle():
    ramp = np.arange(64, dtype=np.float64).reshape(8, 8) / 64.0
    box = np.full((3, 3), 1.0 / 9.0)
    got = dg.degrade(ramp, box, dg.DegradationConfig(scale=2))
    np.testing.assert_allclose(got, oracle_degrade(ramp, box, 2), atol=1e-12)
    rng = np.random.default_rng(2)
    for s in (1, 2, 3):
        x = rng.uniform(0.0, 1.0, size=(11, 13))
        k = kg.sample_kernel(2, rng)
        got = dg.degrade(x, k, dg.DegradationConfig(scale=s))
        np.testing.assert_allclose(got, oracle_degrade(x, k, s), atol=1e-12)


def test_delta_kernel_identity():
    rng = np.random.default_rng(4)
    x = rng.uniform(0.0, 1.0, size=(9, 9))
    y = dg.degrade(x, delta_kernel(5), dg.DegradationConfig(scale=1))
    np.testing.assert_allclose(y, x, atol=0.0)


def test_constant_image_stays_constant():
    k = kg.sample_kernel(2, np.random.default_rng(6))
    x = np.full((16, 16), 0.37)
    y = dg.degrade(x, k, dg.DegradationConfig(scale=2))
    assert y.shape == (8, 8)
    np.testing.assert_allclose(y, 0.37, atol=1e-12)


def test_output_extents_are_ceil():
    k = delta_kernel(3)
    y = dg.degrade(np.zeros((7, 10)), k, dg.DegradationConfig(scale=3))
    assert y.shape == (3, 4)


def test_linearity_in_image_and_kernel():
    rng = np.random.default_rng(8)
    cfg = dg.DegradationConfig(scale=2)
    x1 = rng.uniform(size=(14, 14))
    x2 = rng.uniform(size=(14, 14))
    k1 = kg.sample_kernel(2, rng)
    k2 = kg.sample_kernel(2, rng)
    a, b = 0.7, -0.3
    lhs = dg.degrade(a * x1 + b * x2, k1, cfg)
    rhs = a * dg.degrade(x1, k1, cfg) + b * dg.degrade(x2, k1, cfg)
    assert np.abs(lhs - rhs).max() < 1e-10
    lhs = dg.degrade(x1, a * k1 + b * k2, cfg)
    rhs = a * dg.degrade(x1, k1, cfg) + b * dg.degrade(x1, k2, cfg)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_shift_convention_keeps_point_on_grid():
    for s in (2, 3, 4):
        side = kg.kernel_side(s)
        k = kg.render_kernel(
            kg.GaussianKernelParams(1.0, 1.0, 0.0, kg.shift_for_scale(s)), side
        )
        i0, j0 = 8, 6
        h = w = s * 16 + 1
        x = np.zeros((h, w))
        x[s * i0, s * j0] = 1.0
        y = dg.degrade(x, k, dg.DegradationConfig(scale=s))
        assert np.unravel_index(np.argmax(y), y.shape) == (i0, j0)


def test_degrade_grad_matches_finite_differences():
    rng = np.random.default_rng(12)
    x = rng.uniform(size=(12, 12))
    k = kg.sample_kernel(2, rng)[3:8, 3:8]
    k = k / k.sum()
    cfg = dg.DegradationConfig(scale=2)
    up = rng.uniform(-1.0, 1.0, size=(6, 6))
    gx, gk = dg.degrade_grad(x, k, cfg, up)

    def loss(xv, kv):
        return float((dg.degrade(xv, kv, cfg) * up).sum())

    step = 1e-5
    for arr, grad in ((x, gx), (k, gk)):
        fd = np.zeros_like(arr)
        for idx in range(arr.size):
            plus, minus = arr.copy(), arr.copy()
            plus.reshape(-1)[idx] += step
            minus.reshape(-1)[idx] -= step
            if arr is x:
                fd.reshape(-1)[idx] = (loss(plus, k) - loss(minus, k)) / (2 * step)
            else:
                fd.reshape(-1)[idx] = (loss(x, plus) - loss(x, minus)) / (2 * step)
        denom = max(np.abs(fd).max(), 1.0)
        assert np.abs(grad - fd).max() / denom < 1e-4


def test_degrade_grad_trivial_cases():
    rng = np.random.default_rng(13)
    x = rng.uniform(size=(10, 10))
    k = delta_kernel(3)
    cfg = dg.DegradationConfig(scale=1)
    gx, gk = dg.degrade_grad(x, k, cfg, np.zeros((10, 10)))
    assert not gx.any() and not gk.any()
    up = rng.uniform(size=(10, 10))
    gx, _ = dg.degrade_grad(x, k, cfg, up)
    np.testing.assert_allclose(gx, up, atol=0.0)


def test_tape_pipeline_matches_numpy_path_and_adjoints():
    rng = np.random.default_rng(21)
    x = rng.uniform(size=(13, 11))
    k = kg.sample_kernel(2, rng)
    cfg = dg.DegradationConfig(scale=2)
    up = rng.uniform(-1.0, 1.0, size=(7, 6))
    tape = dc.Tape()
    xt = tape.tensor(x, requires_grad=True)
    kt = tape.tensor(k, requires_grad=True)
    out = dg.blur_downsample_ops(xt, kt, 2)
    np.testing.assert_allclose(out.data, dg.degrade(x, k, cfg), atol=1e-12)
    grads = tape.backward(dc.tensor_sum(dc.multiply(out, tape.constant(up))))
    gx, gk = dg.degrade_grad(x, k, cfg, up)
    np.testing.assert_allclose(grads[xt], gx, atol=1e-12)
    np.testing.assert_allclose(grads[kt], gk, atol=1e-12)


def test_noise_statistics_and_determinism():
    x = np.full((256, 256), 0.5)
    cfg = dg.DegradationConfig(scale=1, noise_level=10 / 255, seed=99)
    k = delta_kernel(3)
    y1 = dg.degrade(x, k, cfg)
    y2 = dg.degrade(x, k, cfg)
    assert y1.tobytes() == y2.tobytes()
    noise = y1 - x
    assert abs(noise.std() - 10 / 255) / (10 / 255) < 0.05
    rng = np.random.default_rng(0)
    z = dg.add_image_noise(x, 10 / 255, rng)
    assert abs((z - x).std() - 10 / 255) / (10 / 255) < 0.05
    same = dg.add_image_noise(x, 0.0, np.random.default_rng(0))
    assert same.tobytes() == x.tobytes()


def test_three_channel_images():
    rng = np.random.default_rng(31)
    x = rng.uniform(size=(12, 12, 3))
    k = kg.sample_kernel(2, rng)
    cfg = dg.DegradationConfig(scale=2)
    y = dg.degrade(x, k, cfg)
    assert y.shape == (6, 6, 3)
    for c in range(3):
        np.testing.assert_allclose(y[:, :, c], dg.degrade(x[:, :, c], k, cfg), atol=1e-12)
    up = rng.uniform(size=(6, 6, 3))
    gx, gk = dg.degrade_grad(x, k, cfg, up)
    assert gx.shape == x.shape and gk.shape == k.shape
    gk_sum = np.zeros_like(k)
    for c in range(3):
        gxc, gkc = dg.degrade_grad(x[:, :, c], k, cfg, up[:, :, c])
        np.testing.assert_allclose(gx[:, :, c], gxc, atol=1e-12)
        gk_sum += gkc
    np.testing.assert_allclose(gk, gk_sum, atol=1e-12)


def test_input_errors():
    cfg = dg.DegradationConfig(scale=2)
    with pytest.raises(InputError):
        dg.degrade(np.zeros((4, 4)), np.zeros((5, 5)), cfg)
    with pytest.raises(InputError):
        dg.degrade(np.zeros((8, 8)), np.zeros((4, 4)), cfg)
    with pytest.raises(InputError):
        dg.degrade(np.zeros((8, 8)), delta_kernel(3), dg.DegradationConfig(2, 1.5))
    with pytest.raises(dc.ContractError):
        dg.degrade_grad(np.zeros((8, 8)), delta_kernel(3), cfg, np.zeros((3, 3)))
