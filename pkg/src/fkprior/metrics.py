"""Evaluation metrics: kernel PSNR, luminance PSNR and SSIM.

Kernel PSNR fixes the peak at 1.0 rather than the ground-truth maximum so
values are comparable across kernel widths. Image metrics operate on the
BT.601 luma channel; PSNR crops a caller-chosen border first so padding
conventions near the frame cannot dominate the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import conv2d_valid
from .errors import InputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class MetricReport:
    kernel_psnr: float
    image_psnr: float
    image_ssim: float


def _psnr_from_mse(mse):
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def kernel_psnr(k_est, k_gt):
    """PSNR between two kernels with peak fixed at 1.0."""
    k_est = np.asarray(k_est, dtype=np.float64)
    k_gt = np.asarray(k_gt, dtype=np.float64)
    if k_est.shape != k_gt.shape:
        raise InputError(f"kernel shape mismatch: {k_est.shape} vs {k_gt.shape}")
    return _psnr_from_mse(float(((k_est - k_gt) ** 2).mean()))


def to_luma(x):
    """BT.601 luma of an RGB image on [0,1]; grayscale passes through."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    if x.ndim != 3 or x.shape[2] != 3:
        raise InputError(f"expected HxW or HxWx3 image, got shape {x.shape}")
    return (
        65.481 * x[:, :, 0] + 128.553 * x[:, :, 1] + 24.966 * x[:, :, 2] + 16.0
    ) / 255.0


def image_psnr(a, b, border=0):
    """Luma PSNR with a border crop on all four sides."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"image shape mismatch: {a.shape} vs {b.shape}")
    if border < 0:
        raise InputError(f"border must be >= 0, got {border}")
    if 2 * border >= min(a.shape[0], a.shape[1]):
        raise InputError(f"border {border} consumes the whole {a.shape[:2]} image")
    la = to_luma(a)[border : a.shape[0] - border, border : a.shape[1] - border]
    lb = to_luma(b)[border : b.shape[0] - border, border : b.shape[1] - border]
    return _psnr_from_mse(float(((la - lb) ** 2).mean()))


def _ssim_window():
    half = SSIM_WINDOW // 2
    r = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(r * r) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    w = np.outer(g, g)
    return w / w.sum()


def image_ssim(a, b):
    """Single-scale SSIM on luma: Gaussian window, mean over valid positions."""
    la = to_luma(np.asarray(a, dtype=np.float64))
    lb = to_luma(np.asarray(b, dtype=np.float64))
    if la.shape != lb.shape:
        raise InputError(f"image shape mismatch: {la.shape} vs {lb.shape}")
    if min(la.shape) < SSIM_WINDOW:
        raise InputError(
            f"image {la.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    w = _ssim_window()
    mu_a = conv2d_valid(la, w)
    mu_b = conv2d_valid(lb, w)
    var_a = conv2d_valid(la * la, w) - mu_a * mu_a
    var_b = conv2d_valid(lb * lb, w) - mu_b * mu_b
    cov = conv2d_valid(la * lb, w) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def _field(value):
    if value is None:
        return "na"
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def report_lines(entries):
    """Comma-separated evaluation lines: id,kernel_psnr,image_psnr,image_ssim."""
    lines = []
    for ident, rep in entries:
        lines.append(
            f"{ident},{_field(rep.kernel_psnr)},"
            f"{_field(rep.image_psnr)},{_field(rep.image_ssim)}"
        )
    return lines
