#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Covers the two hot loops behind the metrics: the cyclic-Jacobi
eigendecomposition (FID matrix square root) and the separable Gaussian
convolution (SSIM local statistics).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from crossview_eval import _kernels_py as pure

try:
    from crossview_eval import _speedups as compiled
except ImportError:
    compiled = None


def bench(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; showing pure-numpy timings only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28} {'size':>10} {'pure (ms)':>12} {'compiled (ms)':>14} {'speedup':>9}")

    for d in (16, 32, 64, 128):
        b = rng.standard_normal((d, d))
        a = b @ b.T
        t_pure = bench(lambda: pure.jacobi_eigh(a), args.repeats)
        if compiled is not None:
            t_comp = bench(lambda: compiled.jacobi_eigh(a), args.repeats)
            print(f"{'jacobi_eigh':<28} {f'{d}x{d}':>10} {t_pure * 1e3:>12.2f} {t_comp * 1e3:>14.2f} "
                  f"{t_pure / t_comp:>8.1f}x")
        else:
            print(f"{'jacobi_eigh':<28} {f'{d}x{d}':>10} {t_pure * 1e3:>12.2f} {'-':>14} {'-':>9}")

    k = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    k /= k.sum()
    for size in (64, 256, 512):
        img = rng.random((size, size))
        t_pure = bench(lambda: pure.sep_conv2d_valid(img, k), args.repeats)
        if compiled is not None:
            t_comp = bench(lambda: compiled.sep_conv2d_valid(img, k), args.repeats)
            print(f"{'sep_conv2d_valid (11 taps)':<28} {f'{size}x{size}':>10} {t_pure * 1e3:>12.2f} "
                  f"{t_comp * 1e3:>14.2f} {t_pure / t_comp:>8.1f}x")
        else:
            print(f"{'sep_conv2d_valid (11 taps)':<28} {f'{size}x{size}':>10} {t_pure * 1e3:>12.2f} "
                  f"{'-':>14} {'-':>9}")


if __name__ == "__main__":
    main()
