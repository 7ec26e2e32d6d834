"""Anisotropic Gaussian blur kernel synthesis, sampling, and perturbation.

Kernels are (side, side) float64 arrays normalized to sum 1. For a scale
factor s the kernel side is 4s+3 and the per-axis widths range over
[0.175s, 2.5s]. The Gaussian mean is shifted by -0.5(s-1) per axis so that
stride-s downsampling anchored at index 0 stays centered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError

SUPPORTED_SCALES = (2, 3, 4)
SIGMA_LO_FACTOR = 0.175
SIGMA_HI_FACTOR = 2.5
MIN_SIGMA = 1e-6


class ConfigurationError(ValueError):
    """Unsupported scale or inconsistent generation settings."""


class ParameterError(ValueError):
    """Kernel parameters outside the representable range."""


class DegenerateKernelError(ArithmeticError):
    """An operation produced an all-zero kernel."""


@dataclass
class GaussianKernelParams:
    sigma1: float
    sigma2: float
    angle: float
    center_offset: tuple[float, float] = (0.0, 0.0)


def kernel_side(scale):
    return 4 * scale + 3


def sigma_range(scale):
    return SIGMA_LO_FACTOR * scale, SIGMA_HI_FACTOR * scale


def shift_for_scale(scale):
    """Mean offset (dy, dx) aligning the kernel with upper-left stride-s sampling."""
    d = -0.5 * (scale - 1)
    return (d, d)


def sample_params(scale, rng, shifted=True):
    """Draw kernel parameters uniformly over the legal box."""
    if scale not in SUPPORTED_SCALES:
        raise ConfigurationError(f"unsupported scale {scale}, expected one of {SUPPORTED_SCALES}")
    lo, hi = sigma_range(scale)
    sigma1 = rng.uniform(lo, hi)
    sigma2 = rng.uniform(lo, hi)
    angle = rng.uniform(0.0, np.pi)
    offset = shift_for_scale(scale) if shifted else (0.0, 0.0)
    return GaussianKernelParams(sigma1, sigma2, angle, offset)


def render_kernel(params, side):
    """Evaluate the rotated bivariate Gaussian on the grid, normalized to sum 1."""
    if side < 1 or side % 2 == 0:
        raise ParameterError(f"kernel side must be odd and positive, got {side}")
    if params.sigma1 < MIN_SIGMA or params.sigma2 < MIN_SIGMA:
        raise ParameterError(
            f"sigma below {MIN_SIGMA} makes the covariance singular: "
            f"({params.sigma1}, {params.sigma2})"
        )
    cy = (side - 1) / 2.0 + params.center_offset[0]
    cx = (side - 1) / 2.0 + params.center_offset[1]
    c, s = np.cos(params.angle), np.sin(params.angle)
    # inv(Sigma) = R diag(1/sigma1^2, 1/sigma2^2) R^T for R = [[c,-s],[s,c]]
    i1, i2 = 1.0 / params.sigma1**2, 1.0 / params.sigma2**2
    a = c * c * i1 + s * s * i2
    b = s * c * (i1 - i2)
    d = s * s * i1 + c * c * i2
    dy = np.arange(side)[:, None] - cy
    dx = np.arange(side)[None, :] - cx
    q = a * dy**2 + 2.0 * b * (dy * dx) + d * dx**2
    w = np.exp(-0.5 * q)
    total = w.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise DegenerateKernelError("kernel mass vanished on the grid")
    return w / total


def sample_kernel(scale, rng, shifted=True):
    """One kernel drawn from the training distribution for ``scale``."""
    return render_kernel(sample_params(scale, rng, shifted), kernel_side(scale))


def perturb_kernel(kernel, amplitude, rng):
    """Multiplicative uniform noise per weight; clamp negatives; renormalize."""
    if not 0.0 <= amplitude <= 1.0:
        raise ParameterError(f"amplitude must be in [0, 1], got {amplitude}")
    u = rng.uniform(-amplitude, amplitude, size=kernel.shape)
    out = np.maximum(kernel * (1.0 + u), 0.0)
    total = out.sum()
    if total <= 0.0:
        raise DegenerateKernelError("perturbation clamped the kernel to zero")
    return out / total


def save_kernel_text(path, kernel):
    """Write the kernel text form: 'FKPK <side>' then side rows of reals."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise FormatError(f"kernel must be square, got shape {kernel.shape}")
    side = kernel.shape[0]
    lines = [f"FKPK {side}"]
    for row in kernel:
        lines.append(" ".join("%.17g" % v for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_kernel_text(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty kernel file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "FKPK":
        raise FormatError(f"{path}: expected 'FKPK <side>' header, got {lines[0]!r}")
    try:
        side = int(head[1])
    except ValueError:
        raise FormatError(f"{path}: bad side {head[1]!r}") from None
    if side < 1 or len(lines) != side + 1:
        raise FormatError(f"{path}: expected {side} rows, got {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != side:
            raise FormatError(f"{path}: row of {len(parts)} values, expected {side}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return np.array(rows, dtype=np.float64)
