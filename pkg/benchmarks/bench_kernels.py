"""Benchmark the compiled convolution backend against the numpy fallback.

Times the three hot functions behind every degradation and estimation run:
valid convolution and its two adjoints. Representative shapes: a 128x128
image against an 11x11 blur kernel (the estimation workload) and a 117x117
padded luma plane against the 11x11 SSIM window (the metrics workload).
"""

import argparse
import time

import numpy as np

from fkprior._kernels import _conv_np

try:
    from fkprior._kernels import _convext
except ImportError:
    _convext = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    img = np.ascontiguousarray(rng.uniform(0.0, 1.0, (138, 138)))
    ker = np.ascontiguousarray(rng.uniform(0.0, 1.0, (11, 11)))
    out = np.ascontiguousarray(rng.uniform(-1.0, 1.0, (128, 128)))
    luma = np.ascontiguousarray(rng.uniform(0.0, 1.0, (117, 117)))
    return [
        ("conv 138^2 x 11^2", lambda m: m.conv2d_valid(img, ker)),
        ("grad-input", lambda m: m.conv2d_valid_grad_input(out, ker, 138, 138)),
        ("grad-kernel", lambda m: m.conv2d_valid_grad_kernel(img, out, 11, 11)),
        ("ssim window 117^2", lambda m: m.conv2d_valid(luma, ker)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'case':<20} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, call in cases(rng):
        ref = call(_conv_np)
        t_np = best_of(lambda: call(_conv_np), args.repeats)
        if _convext is None:
            print(f"{name:<20} {t_np * 1e3:>8.3f}ms {'n/a':>10} {'n/a':>8}")
            continue
        got = call(_convext)
        assert np.allclose(got, ref, atol=1e-12), name
        t_cy = best_of(lambda: call(_convext), args.repeats)
        print(
            f"{name:<20} {t_np * 1e3:>8.3f}ms {t_cy * 1e3:>8.3f}ms "
            f"{t_np / t_cy:>7.1f}x"
        )


if __name__ == "__main__":
    main()
