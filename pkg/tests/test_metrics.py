import math

import numpy as np
import pytest

from fkprior import seeds
from fkprior.errors import InputError
from fkprior.metrics import (
    MetricReport,
    image_psnr,
    image_ssim,
    kernel_psnr,
    report_lines,
    to_luma,
)

# independent reference implementations, direct transcriptions of the
# definitions, shared with the acceptance suite's oracle check


def oracle_kernel_psnr(a, b):
    mse = np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def oracle_luma(x):
    x = np.asarray(x, float)
    if x.ndim == 2:
        return x
    return (x[..., 0] * 65.481 + x[..., 1] * 128.553 + x[..., 2] * 24.966 + 16.0) / 255.0


def oracle_image_psnr(a, b, border=0):
    la, lb = oracle_luma(a), oracle_luma(b)
    if border:
        la = la[border:-border, border:-border]
        lb = lb[border:-border, border:-border]
    return oracle_kernel_psnr(la, lb)


def oracle_ssim(a, b):
    la, lb = oracle_luma(a), oracle_luma(b)
    half = 5
    r = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(r * r) / (2.0 * 1.5 * 1.5))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    rows = la.shape[0] - 2 * half
    cols = la.shape[1] - 2 * half
    vals = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            pa = la[i : i + 11, j : j + 11]
            pb = lb[i : i + 11, j : j + 11]
            mu_a, mu_b = (w * pa).sum(), (w * pb).sum()
            va = (w * pa * pa).sum() - mu_a * mu_a
            vb = (w * pb * pb).sum() - mu_b * mu_b
            cov = (w * pa * pb).sum() - mu_a * mu_b
            vals[i, j] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2)
            )
    return float(vals.mean())


def test_kernel_psnr_matches_oracle():
    rng = seeds.stream(0, "metric-kernels")
    for _ in range(50):
        a = rng.uniform(0.0, 1.0, (11, 11))
        b = rng.uniform(0.0, 1.0, (11, 11))
        assert abs(kernel_psnr(a, b) - oracle_kernel_psnr(a, b)) < 1e-9


def test_kernel_psnr_closed_form_delta_vs_uniform():
    side = 11
    delta = np.zeros((side, side))
    delta[side // 2, side // 2] = 1.0
    uniform = np.full((side, side), 1.0 / side**2)
    n = side**2
    mse = ((1.0 - 1.0 / n) ** 2 + (n - 1) * (1.0 / n) ** 2) / n
    assert abs(kernel_psnr(delta, uniform) - 10.0 * math.log10(1.0 / mse)) < 1e-12
    assert kernel_psnr(delta, delta) == math.inf


def test_luma_endpoints_and_passthrough():
    white = np.ones((2, 2, 3))
    black = np.zeros((2, 2, 3))
    assert np.allclose(to_luma(white), 235.0 / 255.0, atol=1e-12)
    assert np.allclose(to_luma(black), 16.0 / 255.0, atol=1e-12)
    gray = seeds.stream(1, "gray").uniform(0.0, 1.0, (5, 7))
    assert np.array_equal(to_luma(gray), gray)


def test_image_psnr_uniform_offset_is_twenty_db():
    a = np.full((16, 16), 0.5)
    b = a + 0.1
    assert abs(image_psnr(a, b) - 20.0) < 1e-9
    assert image_psnr(a, a) == math.inf


def test_image_psnr_matches_oracle():
    rng = seeds.stream(2, "metric-images")
    for _ in range(50):
        shape = (int(rng.integers(12, 24)), int(rng.integers(12, 24)))
        if rng.uniform() < 0.5:
            shape = shape + (3,)
        a = rng.uniform(0.0, 1.0, shape)
        b = rng.uniform(0.0, 1.0, shape)
        border = int(rng.integers(0, 3))
        got = image_psnr(a, b, border=border)
        want = oracle_image_psnr(a, b, border=border)
        assert abs(got - want) < 1e-9


def test_image_psnr_border_excludes_rim():
    rng = seeds.stream(3, "rim")
    a = rng.uniform(0.0, 1.0, (12, 12))
    b = a.copy()
    b[0, :] += 0.3
    b[:, -1] -= 0.2
    assert image_psnr(a, b) < 30.0
    assert image_psnr(a, b, border=1) == math.inf


def test_ssim_matches_oracle():
    rng = seeds.stream(4, "metric-ssim")
    for _ in range(10):
        shape = (int(rng.integers(12, 20)), int(rng.integers(12, 20)))
        if rng.uniform() < 0.5:
            shape = shape + (3,)
        a = rng.uniform(0.0, 1.0, shape)
        b = np.clip(a + rng.uniform(-0.2, 0.2, shape), 0.0, 1.0)
        assert abs(image_ssim(a, b) - oracle_ssim(a, b)) < 1e-9


def test_ssim_identity_symmetry_range():
    rng = seeds.stream(5, "ssim-props")
    for _ in range(10):
        a = rng.uniform(0.0, 1.0, (14, 14))
        b = rng.uniform(0.0, 1.0, (14, 14))
        assert abs(image_ssim(a, a) - 1.0) < 1e-12
        s = image_ssim(a, b)
        assert abs(s - image_ssim(b, a)) < 1e-12
        assert -1.0 <= s <= 1.0


def test_ssim_negative_on_inverted_checkerboard():
    yy, xx = np.mgrid[0:16, 0:16]
    board = 0.5 + 0.4 * ((yy + xx) % 2 * 2.0 - 1.0)
    inverted = 1.0 - board
    assert image_ssim(board, inverted) < 0.0


def test_ssim_monotone_in_noise_amplitude():
    rng = seeds.stream(6, "ssim-noise")
    base = np.clip(
        0.5 + 0.3 * np.sin(np.linspace(0, 6, 24))[:, None] + 0.0 * np.zeros((24, 24)),
        0.0,
        1.0,
    )
    noise = rng.standard_normal((24, 24))
    scores = [
        image_ssim(base, np.clip(base + eps * noise, 0.0, 1.0))
        for eps in (0.4, 0.2, 0.1, 0.05)
    ]
    assert scores == sorted(scores)
    assert scores[-1] > scores[0] + 0.2


def test_report_lines_format():
    entries = [
        ("case0", MetricReport(kernel_psnr=45.1234567, image_psnr=math.inf, image_ssim=0.5)),
        ("case1", MetricReport(kernel_psnr=None, image_psnr=12.0, image_ssim=-0.25)),
    ]
    lines = report_lines(entries)
    assert lines == [
        "case0,45.123457,inf,0.500000",
        "case1,na,12.000000,-0.250000",
    ]


def test_metric_input_contracts():
    a = np.zeros((12, 12))
    with pytest.raises(InputError):
        kernel_psnr(np.zeros((11, 11)), np.zeros((13, 13)))
    with pytest.raises(InputError):
        image_psnr(a, np.zeros((12, 13)))
    with pytest.raises(InputError):
        image_psnr(a, a, border=-1)
    with pytest.raises(InputError):
        image_psnr(a, a, border=6)
    with pytest.raises(InputError):
        image_ssim(a, np.zeros((13, 12)))
    with pytest.raises(InputError):
        image_ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(InputError):
        to_luma(np.zeros((4, 4, 4)))
