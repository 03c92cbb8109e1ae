"""Timing comparison of the numba kernels against the pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mtok.kernels import numba_backend, numpy_backend


def timeit(fn, repeats: int) -> float:
    fn()  # warm up (numba compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    h = rng.standard_normal((4096, 128)).astype(np.float32)
    codes = rng.standard_normal((256, 128)).astype(np.float32)
    x = rng.standard_normal((16, 64, 96)).astype(np.float32)
    cols = numpy_backend.im2col(np.pad(x, ((0, 0), (2, 2), (0, 0))), 5, 1)
    idx = rng.integers(0, 256, size=4096)

    cases = [
        ("nearest_codes 4096x256x128",
         lambda b: b.nearest_codes(h, codes)),
        ("im2col k5 s1 (16,64,96)",
         lambda b: b.im2col(np.pad(x, ((0, 0), (2, 2), (0, 0))), 5, 1)),
        ("col2im k5 s1 (16,64,96)",
         lambda b: b.col2im(cols, 68, 5, 1)),
        ("ema_accumulate 4096->256",
         lambda b: b.ema_accumulate(idx, h, 256)),
    ]
    print(f"{'kernel':34s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, fn in cases:
        t_np = timeit(lambda: fn(numpy_backend), args.repeats)
        t_nb = timeit(lambda: fn(numba_backend), args.repeats)
        print(f"{name:34s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
