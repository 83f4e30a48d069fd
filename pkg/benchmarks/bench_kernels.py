#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot data passes (moment accumulation and residual scoring)
at several problem sizes and prints a table with the speedup of numba
over numpy. BLAS-backed numpy wins at large stacked widths where gemm's
blocking dominates; the fused numba pass wins when widths are modest and
numpy's temporaries start to hurt. Run after any kernel change:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from lmdkit import _kernels

SIZES = [
    # (rows, stacked width kd, target width d_u)
    (200_000, 16, 8),
    (100_000, 48, 16),
    (50_000, 128, 32),
    (20_000, 384, 96),
]


def time_moments(backend, u, z, repeats):
    _kernels.use_backend(backend)
    kd, du = z.shape[1], u.shape[1]
    best = float("inf")
    for _ in range(repeats):
        sum_z, sum_u = np.zeros(kd), np.zeros(du)
        sum_zz, sum_uz = np.zeros((kd, kd)), np.zeros((du, kd))
        start = time.perf_counter()
        _kernels.accumulate_moments(u, z, sum_z, sum_u, sum_zz, sum_uz)
        _kernels.moments_symmetrize(sum_zz)
        best = min(best, time.perf_counter() - start)
    return best


def time_fit(backend, u, z, w_t, bias, repeats):
    _kernels.use_backend(backend)
    best = float("inf")
    for _ in range(repeats):
        sum_u = np.zeros(u.shape[1])
        start = time.perf_counter()
        _kernels.accumulate_fit(u, z, w_t, bias, sum_u)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = _kernels.available_backends()
    if "numba" not in backends:
        print("numba not available; nothing to compare")
        return

    _kernels.use_backend("numba")
    _kernels.warmup()

    header = f"{'pass':<8} {'rows':>8} {'kd':>5} {'d_u':>4} {'numba':>10} {'numpy':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for rows, kd, du in SIZES:
        u = rng.standard_normal((rows, du))
        z = rng.standard_normal((rows, kd))
        w_t = np.ascontiguousarray(rng.standard_normal((kd, du)))
        bias = rng.standard_normal(du)

        # trigger specialization for these shapes before timing
        time_moments("numba", u[:64], z[:64], 1)
        time_fit("numba", u[:64], z[:64], w_t, bias, 1)

        t_nb = time_moments("numba", u, z, args.repeats)
        t_np = time_moments("numpy", u, z, args.repeats)
        print(f"{'moments':<8} {rows:>8} {kd:>5} {du:>4} {t_nb * 1e3:>8.1f}ms "
              f"{t_np * 1e3:>8.1f}ms {t_np / t_nb:>7.2f}x")

        t_nb = time_fit("numba", u, z, w_t, bias, args.repeats)
        t_np = time_fit("numpy", u, z, w_t, bias, args.repeats)
        print(f"{'fit':<8} {rows:>8} {kd:>5} {du:>4} {t_nb * 1e3:>8.1f}ms "
              f"{t_np * 1e3:>8.1f}ms {t_np / t_nb:>7.2f}x")
    _kernels.use_backend("auto")


if __name__ == "__main__":
    main()
