"""Command-line front end: train, sample, degrade, estimate, eval.

Every command resolves its settings from built-in defaults, then an
optional "key=value" config file (lines starting with "#" are comments),
then explicit flags — later sources win — and writes the fully-resolved
configuration beside its outputs so any run can be reproduced verbatim
with ``--config``. One ``--seed`` flag feeds every random stream through
per-purpose labeled splits.

Exit codes: 0 success, 2 usage or bad input, 3 numeric failure, 4
malformed file.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import seeds
from .degrade import DegradationConfig, degrade
from .diffcore import ContractError, NumericError
from .errors import FormatError, InputError
from .estimate import EstimationConfig, estimate_joint, estimate_reference
from .flowprior import FlowModel, TrainConfig, load_model, sample, save_model, train
from .kernelgen import (
    ConfigurationError,
    GaussianKernelParams,
    ParameterError,
    kernel_side,
    load_kernel_text,
    render_kernel,
    save_kernel_text,
    shift_for_scale,
)
from .metrics import MetricReport, image_psnr, image_ssim, kernel_psnr, report_lines
from .netpbm import load_image, save_image

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_FORMAT = 4

# every settable key per command with its value parser; "paths" values are
# comma-joined lists so the resolved file round-trips multi-image runs
_PATHS = object()

_SCHEMAS = {
    "train": {
        "scale": int,
        "iters": int,
        "batch": int,
        "lr": float,
        "seed": int,
        "out": str,
    },
    "sample": {"model": str, "count": int, "seed": int, "outdir": str},
    "degrade": {
        "image": str,
        "scale": int,
        "sigma1": float,
        "sigma2": float,
        "angle": float,
        "kernel": str,
        "noise": float,
        "seed": int,
        "out": str,
    },
    "estimate": {
        "lr_image": _PATHS,
        "model": str,
        "mode": str,
        "hr_image": _PATHS,
        "iters": int,
        "seed": int,
        "jobs": int,
        "outdir": str,
    },
    "eval": {
        "est_kernel": str,
        "gt_kernel": str,
        "est_image": str,
        "gt_image": str,
        "scale": int,
        "id": str,
        "report": str,
    },
}

_DEFAULTS = {
    "train": {"scale": 2, "iters": 50000, "batch": 100, "lr": 1e-4, "seed": 0, "out": None},
    "sample": {"model": None, "count": 7, "seed": 0, "outdir": None},
    "degrade": {
        "image": None,
        "scale": 2,
        "sigma1": None,
        "sigma2": None,
        "angle": 0.0,
        "kernel": None,
        "noise": 0.0,
        "seed": 0,
        "out": None,
    },
    "estimate": {
        "lr_image": None,
        "model": None,
        "mode": "reference",
        "hr_image": None,
        "iters": 1000,
        "seed": 0,
        "jobs": 1,
        "outdir": None,
    },
    "eval": {
        "est_kernel": None,
        "gt_kernel": None,
        "est_image": None,
        "gt_image": None,
        "scale": 2,
        "id": None,
        "report": None,
    },
}


def _parse_value(command, key, text):
    kind = _SCHEMAS[command][key]
    if kind is _PATHS:
        return [p for p in text.split(",") if p]
    if kind is float:
        return float(text)
    if kind is int:
        return int(text)
    return text


def _read_config(command, path):
    try:
        with open(path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for ln, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise FormatError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in _SCHEMAS[command]:
            raise InputError(f"{path}:{ln}: unknown key {key!r} for {command}")
        try:
            out[key] = _parse_value(command, key, value)
        except ValueError as exc:
            raise FormatError(f"{path}:{ln}: bad value for {key}: {exc}") from exc
    return out


def _resolve(command, args):
    cfg = dict(_DEFAULTS[command])
    if args.config:
        cfg.update(_read_config(command, args.config))
    for key in _SCHEMAS[command]:
        flag = getattr(args, key)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _format_value(command, key, value):
    kind = _SCHEMAS[command][key]
    if kind is _PATHS:
        return ",".join(value)
    if kind is float:
        return repr(float(value))
    return str(value)


def _write_resolved(command, cfg, path):
    lines = [f"# resolved {command} configuration"]
    for key in sorted(cfg):
        if cfg[key] is None:
            continue
        lines.append(f"{key}={_format_value(command, key, cfg[key])}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _require(cfg, keys, command):
    for key in keys:
        if cfg[key] is None:
            raise InputError(f"{command}: missing required setting --{key.replace('_', '-')}")


def cmd_train(cfg):
    _require(cfg, ("out",), "train")
    _write_resolved("train", cfg, cfg["out"] + ".config")
    model = FlowModel.create(scale=cfg["scale"], seed=cfg["seed"])
    train(
        model,
        TrainConfig(
            iterations=cfg["iters"],
            batch_size=cfg["batch"],
            learning_rate=cfg["lr"],
            seed=cfg["seed"],
            log_path=cfg["out"] + ".log",
            checkpoint_path=cfg["out"] + ".checkpoint",
        ),
    )
    save_model(cfg["out"], model)
    return 0


def _contact_sheet(kernels, side):
    cols = min(len(kernels), 8)
    rows = (len(kernels) + cols - 1) // cols
    sheet = np.full((rows * (side + 1) + 1, cols * (side + 1) + 1), 0.5)
    for i, k in enumerate(kernels):
        r, c = divmod(i, cols)
        tile = k / k.max() if k.max() > 0 else k
        sheet[
            r * (side + 1) + 1 : (r + 1) * (side + 1),
            c * (side + 1) + 1 : (c + 1) * (side + 1),
        ] = tile
    return sheet


def cmd_sample(cfg):
    _require(cfg, ("model", "outdir"), "sample")
    if cfg["count"] < 0:
        raise InputError(f"sample: count must be >= 0, got {cfg['count']}")
    model = load_model(cfg["model"])
    os.makedirs(cfg["outdir"], exist_ok=True)
    _write_resolved("sample", cfg, os.path.join(cfg["outdir"], "sample.config"))
    rng = seeds.stream(cfg["seed"], "cli-sample")
    kernels = [sample(model, rng) for _ in range(cfg["count"])]
    for i, k in enumerate(kernels):
        save_kernel_text(os.path.join(cfg["outdir"], f"kernel-{i:03d}.fkpk"), k)
    if kernels:
        sheet = _contact_sheet(kernels, model.side)
        save_image(os.path.join(cfg["outdir"], "contact-sheet.pgm"), sheet)
    return 0


def cmd_degrade(cfg):
    _require(cfg, ("image", "out"), "degrade")
    explicit = cfg["sigma1"] is not None or cfg["sigma2"] is not None
    if explicit == (cfg["kernel"] is not None):
        raise InputError("degrade: give either --sigma1/--sigma2/--angle or --kernel")
    if explicit and (cfg["sigma1"] is None or cfg["sigma2"] is None):
        raise InputError("degrade: --sigma1 and --sigma2 must be given together")
    _write_resolved("degrade", cfg, cfg["out"] + ".config")
    if explicit:
        params = GaussianKernelParams(
            cfg["sigma1"], cfg["sigma2"], cfg["angle"], shift_for_scale(cfg["scale"])
        )
        kernel = render_kernel(params, kernel_side(cfg["scale"]))
    else:
        kernel = load_kernel_text(cfg["kernel"])
    x = load_image(cfg["image"])
    y = degrade(
        x,
        kernel,
        DegradationConfig(scale=cfg["scale"], noise_level=cfg["noise"], seed=cfg["seed"]),
    )
    save_image(cfg["out"], y)
    save_kernel_text(os.path.splitext(cfg["out"])[0] + "-kernel.fkpk", kernel)
    return 0


def _estimate_one(model_path, lr_path, hr_path, cfg):
    model = load_model(model_path)
    y = load_image(lr_path)
    econf = EstimationConfig(mode=cfg["mode"], iterations=cfg["iters"], seed=cfg["seed"])
    if cfg["mode"] == "reference":
        result = estimate_reference(y, load_image(hr_path), model, econf)
    else:
        result = estimate_joint(y, model, econf)
    stem = os.path.splitext(os.path.basename(lr_path))[0]
    outdir = cfg["outdir"]
    save_kernel_text(os.path.join(outdir, f"{stem}-kernel.fkpk"), result.kernel)
    with open(os.path.join(outdir, f"{stem}-latent.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(repr(v) for v in result.latent) + "\n")
    with open(os.path.join(outdir, f"{stem}-trace.csv"), "w", encoding="ascii") as fh:
        fh.write("iter,value\n")
        for i, v in enumerate(result.loss_trace):
            fh.write(f"{i},{v!r}\n")
    if result.image is not None:
        ext = "ppm" if result.image.ndim == 3 else "pgm"
        save_image(os.path.join(outdir, f"{stem}-image.{ext}"), result.image)
    return stem


def cmd_estimate(cfg):
    _require(cfg, ("lr_image", "model", "outdir"), "estimate")
    if cfg["mode"] not in ("reference", "joint"):
        raise InputError(f"estimate: unknown mode {cfg['mode']!r}")
    lr_paths = cfg["lr_image"]
    hr_paths = cfg["hr_image"]
    if cfg["mode"] == "reference":
        if not hr_paths:
            raise InputError("estimate: --mode reference requires --hr-image")
        if len(hr_paths) != len(lr_paths):
            raise InputError(
                f"estimate: {len(lr_paths)} LR images but {len(hr_paths)} HR images"
            )
    else:
        hr_paths = [None] * len(lr_paths)
    if cfg["jobs"] < 1:
        raise InputError(f"estimate: jobs must be >= 1, got {cfg['jobs']}")
    os.makedirs(cfg["outdir"], exist_ok=True)
    _write_resolved("estimate", cfg, os.path.join(cfg["outdir"], "estimate.config"))
    jobs = [(cfg["model"], lr, hr, cfg) for lr, hr in zip(lr_paths, hr_paths)]
    if cfg["jobs"] == 1 or len(jobs) == 1:
        for job in jobs:
            _estimate_one(*job)
    else:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            list(pool.map(_estimate_one, *zip(*jobs)))
    return 0


def cmd_eval(cfg):
    _require(cfg, ("est_kernel", "gt_kernel"), "eval")
    if (cfg["est_image"] is None) != (cfg["gt_image"] is None):
        raise InputError("eval: --est-image and --gt-image must be given together")
    k_est = load_kernel_text(cfg["est_kernel"])
    k_gt = load_kernel_text(cfg["gt_kernel"])
    kpsnr = kernel_psnr(k_est, k_gt)
    ipsnr = issim = None
    if cfg["est_image"] is not None:
        a = load_image(cfg["est_image"])
        b = load_image(cfg["gt_image"])
        ipsnr = image_psnr(a, b, border=cfg["scale"])
        issim = image_ssim(a, b)
    ident = cfg["id"] or os.path.splitext(os.path.basename(cfg["est_kernel"]))[0]
    line = report_lines([(ident, MetricReport(kpsnr, ipsnr, issim))])[0]
    print(line)
    if cfg["report"]:
        with open(cfg["report"], "a", encoding="ascii") as fh:
            fh.write(line + "\n")
        _write_resolved("eval", cfg, cfg["report"] + ".config")
    return 0


def _add_common(sub):
    sub.add_argument("--config", help="key=value settings file; flags override it")
    sub.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="fkp")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a flow prior on sampled kernels")
    _add_common(p)
    p.add_argument("--scale", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out")

    p = subs.add_parser("sample", help="draw kernels from a trained model")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--count", type=int)
    p.add_argument("--outdir")

    p = subs.add_parser("degrade", help="blur, downsample, and add noise")
    _add_common(p)
    p.add_argument("--image")
    p.add_argument("--scale", type=int)
    p.add_argument("--sigma1", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--angle", type=float)
    p.add_argument("--kernel")
    p.add_argument("--noise", type=float)
    p.add_argument("--out")

    p = subs.add_parser("estimate", help="estimate the blur kernel of LR images")
    _add_common(p)
    p.add_argument("--lr-image", nargs="+", dest="lr_image")
    p.add_argument("--model")
    p.add_argument("--mode", choices=("reference", "joint"))
    p.add_argument("--hr-image", nargs="+", dest="hr_image")
    p.add_argument("--iters", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--outdir")

    p = subs.add_parser("eval", help="score estimated kernels and images")
    _add_common(p)
    p.add_argument("--est-kernel", dest="est_kernel")
    p.add_argument("--gt-kernel", dest="gt_kernel")
    p.add_argument("--est-image", dest="est_image")
    p.add_argument("--gt-image", dest="gt_image")
    p.add_argument("--scale", type=int)
    p.add_argument("--id", dest="id")
    p.add_argument("--report")

    return parser


_COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "degrade": cmd_degrade,
    "estimate": cmd_estimate,
    "eval": cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(args.command, args)
        return _COMMANDS[args.command](cfg)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        InputError,
        ContractError,
        ConfigurationError,
        ParameterError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
