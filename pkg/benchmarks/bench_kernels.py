#!/usr/bin/env python3
"""Time the jitted hot kernels against the pure-numpy fallback.

Sizes mirror one training step: two 128-row batches of 64-dim features,
three Gram blocks per marginal statistic. Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from ddalign import _accel
from ddalign.kernels import mmd_with_grad


def timeit(fn, repeats=200):
    fn()  # warm-up (triggers JIT compilation on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    rng = np.random.default_rng(0)
    sizes = [(128, 128, 64), (256, 256, 64), (512, 512, 64)]
    print(f"active backend: {_accel.ACTIVE_BACKEND}")
    print(f"{'n x m x d':>16} {'numba-path (ms)':>16} {'numpy (ms)':>12} {'speedup':>8}")
    for n, m, d in sizes:
        X, Y = rng.normal(size=(n, d)), rng.normal(size=(m, d))
        t_active = timeit(lambda: _accel.gaussian_kernel_matrix(X, Y, 2.0)) * 1e3
        t_numpy = timeit(lambda: _accel.gaussian_kernel_matrix_numpy(X, Y, 2.0)) * 1e3
        print(f"{f'{n}x{m}x{d}':>16} {t_active:16.3f} {t_numpy:12.3f} {t_numpy / t_active:8.2f}")

    X, Y = rng.normal(size=(128, 64)), rng.normal(size=(128, 64))
    t_grad = timeit(lambda: mmd_with_grad(X, Y, 2.0), repeats=100) * 1e3
    print(f"\nmmd_with_grad 128x128x64: {t_grad:.3f} ms per call")


if __name__ == "__main__":
    main()
