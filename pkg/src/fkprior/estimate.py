"""Blur-kernel estimation from a degraded image.

Three estimators share one data-fidelity loss, the mean squared error
between the observed low-resolution image and the degradation of a
high-resolution image by a candidate kernel:

* reference mode: the HR image is known; Adam optimizes the flow latent z,
  re-projected to the sqrt(D) sphere after every update.
* joint mode: the HR image is unknown; alternating Adam steps co-optimize
  the image (fidelity plus a total-variation prior) and the latent
  (fidelity only). The image starts as the nearest-neighbor upsample of the
  input.
* parametric baseline: Adam on (sigma1, sigma2, angle) through the Gaussian
  kernel renderer, sigmas box-projected into the legal range after every
  step.

Every estimator records the fidelity value of each iteration and returns
the best iterate seen, not the last: latent optimization oscillates near
convergence. Returned kernels are cleaned like drawn samples (negatives
clamped, renormalized); the raw best latent is preserved alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import seeds
from .degrade import DegradationConfig, blur_downsample_ops, degrade, degrade_grad
from .diffcore import ContractError, NumericError
from .errors import InputError
from .flowprior import inverse_ops
from .kernelgen import (
    GaussianKernelParams,
    kernel_side,
    render_kernel,
    shift_for_scale,
    sigma_range,
)
from .optim import Adam


class DegenerateLatentError(ArithmeticError):
    """Sphere projection of a zero latent vector."""


class NumericAbort(NumericError):
    """Numeric failure mid-run; the loss trace so far is retained."""

    def __init__(self, message, loss_trace):
        super().__init__(message)
        self.loss_trace = loss_trace


@dataclass
class EstimationConfig:
    mode: str = "reference"
    iterations: int = 1000
    latent_lr: float = 0.1
    image_lr: float = 0.005
    tv_weight: float = 0.01
    seed: int = 0
    project_every_step: bool = True


@dataclass
class EstimationResult:
    kernel: np.ndarray
    latent: np.ndarray | None
    loss_trace: list[float] = field(default_factory=list)
    image: np.ndarray | None = None
    params: np.ndarray | None = None


def project_sphere(z):
    """Rescale z to Euclidean norm sqrt(D)."""
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise DegenerateLatentError("cannot project a zero latent vector")
    return z * (math.sqrt(z.size) / norm)


def init_latent(model, rng):
    """Standard-normal draw projected onto the sqrt(D) sphere."""
    return project_sphere(rng.standard_normal(model.latent_dim))


def _channels(x):
    if x.ndim == 2:
        return [x]
    return [x[:, :, c] for c in range(x.shape[2])]


def _check_config(cfg):
    if cfg.iterations < 1:
        raise InputError(f"iterations must be >= 1, got {cfg.iterations}")
    if cfg.latent_lr <= 0.0 or cfg.image_lr <= 0.0:
        raise InputError("learning rates must be positive")


def _check_pair(y, x_ref, scale):
    if y.ndim != x_ref.ndim or (y.ndim == 3 and y.shape[2] != x_ref.shape[2]):
        raise InputError(
            f"channel mismatch: observed {y.shape}, reference {x_ref.shape}"
        )
    want = tuple((n + scale - 1) // scale for n in x_ref.shape[:2])
    if y.shape[:2] != want:
        raise InputError(
            f"observed extents {y.shape[:2]} do not match reference "
            f"{x_ref.shape[:2]} at scale {scale} (expected {want})"
        )


def _fidelity(tape, x_tensors, kernel_t, y, scale):
    """Mean squared residual over all pixels and channels.

    The raw flow output is normalized to unit mass inside the graph — a blur
    kernel is sum-to-one by definition, and in joint mode an unnormalized
    kernel opens a scale gauge (kernel mass up, image amplitude down) that
    the optimizer walks along, warping the kernel shape as it goes.
    """
    unit_kernel = dc.multiply(kernel_t, dc.reciprocal(dc.tensor_sum(kernel_t)))
    total = None
    count = 0
    for xt, yc in zip(x_tensors, _channels(y)):
        out = blur_downsample_ops(xt, unit_kernel, scale)
        resid = dc.subtract(out, tape.constant(yc))
        sq = dc.tensor_sum(dc.square(resid))
        total = sq if total is None else dc.add(total, sq)
        count += yc.size
    return dc.multiply(total, tape.constant(1.0 / count))


def reference_fidelity_graph(model, z, x_ref, y):
    """Tape graph of the reference-mode loss.

    Returns (tape, latent tensor, kernel tensor, loss tensor).
    """
    tape = dc.Tape()
    z_t = tape.tensor(z, requires_grad=True)
    k_row = inverse_ops(model, tape, z_t)
    k_t = dc.reshape(k_row, (model.side, model.side))
    x_tensors = [tape.constant(c) for c in _channels(x_ref)]
    loss = _fidelity(tape, x_tensors, k_t, y, model.scale)
    return tape, z_t, k_t, loss


def _clean_kernel(raw):
    clamped = np.maximum(raw, 0.0)
    mass = clamped.sum()
    if mass <= 0.0:
        raise NumericError("estimated kernel clamped to zero")
    return clamped / mass


def estimate_reference(y, x_ref, model, cfg):
    """Optimize the flow latent against a known HR image."""
    if not model.frozen:
        raise ContractError("estimation requires a frozen model")
    _check_config(cfg)
    y = np.asarray(y, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    _check_pair(y, x_ref, model.scale)
    z = init_latent(model, seeds.stream(cfg.seed, "estimate-init"))
    opt = Adam([z], cfg.latent_lr)
    trace = []
    best_fid = math.inf
    best_z = None
    best_raw = None
    for _ in range(cfg.iterations):
        try:
            tape, z_t, k_t, loss = reference_fidelity_graph(model, z, x_ref, y)
            grads = tape.backward(loss)
        except NumericError as exc:
            raise NumericAbort(str(exc), trace) from exc
        fid = loss.item()
        trace.append(fid)
        if fid < best_fid:
            best_fid = fid
            best_z = z.copy()
            best_raw = k_t.data.copy()
        opt.step([grads[z_t]])
        if cfg.project_every_step:
            z[:] = project_sphere(z)
    return EstimationResult(
        kernel=_clean_kernel(best_raw), latent=best_z, loss_trace=trace
    )


def _nn_upsample(y, scale):
    return np.repeat(np.repeat(y, scale, axis=0), scale, axis=1)


def _tv(tape, x_tensors):
    total = None
    for xt in x_tensors:
        dy = dc.subtract(xt[1:, :], xt[: xt.shape[0] - 1, :])
        dx = dc.subtract(xt[:, 1:], xt[:, : xt.shape[1] - 1])
        term = dc.add(dc.mean(dc.absolute(dy)), dc.mean(dc.absolute(dx)))
        total = term if total is None else dc.add(total, term)
    return dc.multiply(total, tape.constant(1.0 / len(x_tensors)))


def estimate_joint(y, model, cfg, x0=None, optimize_image=True):
    """Co-estimate the HR image (TV prior) and the kernel latent."""
    if not model.frozen:
        raise ContractError("estimation requires a frozen model")
    _check_config(cfg)
    y = np.asarray(y, dtype=np.float64)
    if min(y.shape[:2]) < 16:
        raise InputError(f"joint mode needs at least 16x16 input, got {y.shape[:2]}")
    s = model.scale
    x = np.array(x0, dtype=np.float64) if x0 is not None else _nn_upsample(y, s)
    _check_pair(y, x, s)
    z = init_latent(model, seeds.stream(cfg.seed, "estimate-init"))
    opt_z = Adam([z], cfg.latent_lr)
    opt_x = Adam([x], cfg.image_lr)
    trace = []
    best_fid = math.inf
    best = None
    for _ in range(cfg.iterations):
        try:
            if optimize_image:
                tape = dc.Tape()
                x_tensors = [tape.tensor(c, requires_grad=True) for c in _channels(x)]
                k_const = tape.constant(_inverse_numpy(model, z))
                loss = dc.add(
                    _fidelity(tape, x_tensors, k_const, y, s),
                    dc.multiply(tape.constant(cfg.tv_weight), _tv(tape, x_tensors)),
                )
                grads = tape.backward(loss)
                gx = [grads[t] for t in x_tensors]
                opt_x.step([gx[0] if x.ndim == 2 else np.stack(gx, axis=2)])

            tape2 = dc.Tape()
            z_t = tape2.tensor(z, requires_grad=True)
            k_t = dc.reshape(inverse_ops(model, tape2, z_t), (model.side, model.side))
            x_tensors2 = [tape2.constant(c) for c in _channels(x)]
            fid_t = _fidelity(tape2, x_tensors2, k_t, y, s)
            grads2 = tape2.backward(fid_t)
        except NumericError as exc:
            raise NumericAbort(str(exc), trace) from exc
        fid = fid_t.item()
        trace.append(fid)
        if fid < best_fid:
            best_fid = fid
            best = (z.copy(), k_t.data.copy(), x.copy())
        opt_z.step([grads2[z_t]])
        if cfg.project_every_step:
            z[:] = project_sphere(z)
    best_z, best_raw, best_x = best
    return EstimationResult(
        kernel=_clean_kernel(best_raw),
        latent=best_z,
        loss_trace=trace,
        image=best_x,
    )


def _inverse_numpy(model, z):
    tape = dc.Tape()
    row = inverse_ops(model, tape, tape.tensor(z))
    raw = row.data[0].reshape(model.side, model.side)
    return raw / raw.sum()


def estimate_parametric(y, x_ref, scale, cfg):
    """Baseline: fit (sigma1, sigma2, angle) of a Gaussian kernel directly."""
    _check_config(cfg)
    y = np.asarray(y, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    _check_pair(y, x_ref, scale)
    lo, hi = sigma_range(scale)
    side = kernel_side(scale)
    offset = shift_for_scale(scale)
    rng = seeds.stream(cfg.seed, "parametric-init")
    theta = np.array([0.5 * (lo + hi), 0.5 * (lo + hi), rng.uniform(0.0, math.pi)])
    opt = Adam([theta], cfg.latent_lr)
    dcfg = DegradationConfig(scale=scale)

    def render(t):
        return render_kernel(GaussianKernelParams(t[0], t[1], t[2], offset), side)

    count = y.size
    step = 1e-4
    trace = []
    best_fid = math.inf
    best = None
    for _ in range(cfg.iterations):
        kern = render(theta)
        resid = degrade(x_ref, kern, dcfg) - y
        fid = float((resid * resid).mean())
        trace.append(fid)
        if fid < best_fid:
            best_fid = fid
            best = (theta.copy(), kern)
        _, gk = degrade_grad(x_ref, kern, dcfg, 2.0 * resid / count)
        grad = np.zeros(3)
        for j in range(3):
            plus, minus = theta.copy(), theta.copy()
            plus[j] += step
            minus[j] -= step
            grad[j] = float(((render(plus) - render(minus)) * gk).sum()) / (2 * step)
        opt.step([grad])
        theta[0] = min(max(theta[0], lo), hi)
        theta[1] = min(max(theta[1], lo), hi)
    best_theta, best_kern = best
    return EstimationResult(
        kernel=best_kern, latent=None, loss_trace=trace, params=best_theta
    )
