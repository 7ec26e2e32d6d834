"""Classical degradation: blur, stride-s downsample keeping upper-left, noise.

Images are float64 arrays, (H, W) for grayscale or (H, W, 3) for RGB, with
values nominally in [0, 1] (clamped only at 8-bit I/O, never inside
optimization). Convolution is true convolution (kernel flipped) over
replicate padding of floor(side/2), so a constant image stays exactly
constant and the output extents are ceil(H/s) x ceil(W/s).

``degrade``/``degrade_grad`` are the fast numpy path with hand-derived
adjoints; ``blur_downsample_ops`` builds the same noiseless pipeline on a
diffcore tape for use inside estimation losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, diffcore, seeds
from .errors import InputError


@dataclass
class DegradationConfig:
    scale: int
    noise_level: float = 0.0
    seed: int = 0


def _channels(x):
    if x.ndim == 2:
        return [x]
    if x.ndim == 3 and x.shape[2] in (1, 3):
        return [x[:, :, c] for c in range(x.shape[2])]
    raise InputError(f"expected (H, W) or (H, W, 1|3) image, got shape {x.shape}")


def _stack_like(channels, x):
    if x.ndim == 2:
        return channels[0]
    return np.stack(channels, axis=2)


def _check_geometry(x, kernel):
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise InputError(f"kernel must be square with odd side, got {kernel.shape}")
    if x.shape[0] < kernel.shape[0] or x.shape[1] < kernel.shape[1]:
        raise InputError(
            f"image {x.shape[:2]} smaller than kernel {kernel.shape}"
        )


def degrade(x, kernel, cfg):
    """y = (x conv k) downsampled by cfg.scale, plus Gaussian noise."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_geometry(x, kernel)
    if not 0.0 <= cfg.noise_level <= 1.0:
        raise InputError(f"noise level must be in [0, 1], got {cfg.noise_level}")
    pad = kernel.shape[0] // 2
    s = cfg.scale
    out = []
    for ch in _channels(x):
        blurred = _kernels.conv2d_valid(np.pad(ch, pad, mode="edge"), kernel)
        out.append(blurred[::s, ::s])
    y = _stack_like(out, x)
    if cfg.noise_level > 0.0:
        rng = seeds.stream(cfg.seed, "degrade-noise")
        y = y + rng.normal(0.0, cfg.noise_level, size=y.shape)
    return y


def _fold_pad_adjoint(gp, pad, h, w):
    # Adjoint of replicate padding: every padded cell maps to its nearest
    # interior pixel, so the gradient accumulates over those preimages.
    if pad == 0:
        return gp.copy()
    yi = np.clip(np.arange(h + 2 * pad) - pad, 0, h - 1)
    xi = np.clip(np.arange(w + 2 * pad) - pad, 0, w - 1)
    gx = np.zeros((h, w))
    np.add.at(gx, (yi[:, None], xi[None, :]), gp)
    return gx


def degrade_grad(x, kernel, cfg, upstream):
    """Exact adjoints (d/dx, d/dk) of the noiseless pipeline."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    _check_geometry(x, kernel)
    s = cfg.scale
    h, w = x.shape[:2]
    want = ((h + s - 1) // s, (w + s - 1) // s) + x.shape[2:]
    if upstream.shape != want:
        raise diffcore.ContractError(
            f"upstream shape {upstream.shape} does not match output {want}"
        )
    pad = kernel.shape[0] // 2
    gk = np.zeros_like(kernel)
    gx_channels = []
    for ch, up in zip(_channels(x), _channels(upstream)):
        padded = np.pad(ch, pad, mode="edge")
        g_conv = np.zeros((h, w))
        g_conv[::s, ::s] = up
        gp = _kernels.conv2d_valid_grad_input(g_conv, kernel, *padded.shape)
        gx_channels.append(_fold_pad_adjoint(gp, pad, h, w))
        gk += _kernels.conv2d_valid_grad_kernel(padded, g_conv, *kernel.shape)
    return _stack_like(gx_channels, x), gk


def add_image_noise(x, level, rng):
    """x plus i.i.d. N(0, level^2) per pixel; level is a fraction of max."""
    if not 0.0 <= level <= 1.0:
        raise InputError(f"noise level must be in [0, 1], got {level}")
    x = np.asarray(x, dtype=np.float64)
    if level == 0.0:
        return x.copy()
    return x + rng.normal(0.0, level, size=x.shape)


def replicate_pad_ops(x, pad):
    """Tape composite: replicate-pad a 2-D tensor by ``pad`` on every side."""
    if pad == 0:
        return x
    top = x[0:1, :]
    bottom = x[x.shape[0] - 1 : x.shape[0], :]
    x = diffcore.concat([top] * pad + [x] + [bottom] * pad, axis=0)
    left = x[:, 0:1]
    right = x[:, x.shape[1] - 1 : x.shape[1]]
    return diffcore.concat([left] * pad + [x] + [right] * pad, axis=1)


def blur_downsample_ops(x, kernel, scale):
    """Tape composite of the noiseless pipeline for 2-D tensors."""
    pad = kernel.shape[0] // 2
    blurred = diffcore.conv2d_valid(replicate_pad_ops(x, pad), kernel)
    return diffcore.downsample_stride(blurred, scale)
