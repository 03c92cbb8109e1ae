"""Numba ``@njit`` implementations of the hot kernels.

Loop bodies mirror the numpy backend exactly; distance accumulation runs in the
input dtype so tie cases (bit-identical rows) stay bit-identical here too.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _nearest_codes_jit(h, codes):
    n, d = h.shape
    k = codes.shape[0]
    indices = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=h.dtype)
    for i in range(n):
        best = np.inf
        best_k = 0
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = h[i, c] - codes[j, c]
                acc += diff * diff
            if acc < best:
                best = acc
                best_k = j
        indices[i] = best_k
        dists[i] = best
    return indices, dists


def nearest_codes(h: np.ndarray, codes: np.ndarray):
    return _nearest_codes_jit(np.ascontiguousarray(h), np.ascontiguousarray(codes))


@njit(cache=True)
def _im2col_jit(x, kernel, stride):
    b, t, c = x.shape
    t_out = (t - kernel) // stride + 1
    out = np.empty((b, t_out, kernel * c), dtype=x.dtype)
    for bi in range(b):
        for ti in range(t_out):
            base = ti * stride
            for ki in range(kernel):
                row = base + ki
                off = ki * c
                for ci in range(c):
                    out[bi, ti, off + ci] = x[bi, row, ci]
    return out


def im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    return _im2col_jit(np.ascontiguousarray(x), kernel, stride)


@njit(cache=True)
def _col2im_jit(cols, t, kernel, stride):
    b, t_out, kc = cols.shape
    c = kc // kernel
    out = np.zeros((b, t, c), dtype=cols.dtype)
    for bi in range(b):
        for ti in range(t_out):
            base = ti * stride
            for ki in range(kernel):
                row = base + ki
                off = ki * c
                for ci in range(c):
                    out[bi, row, ci] += cols[bi, ti, off + ci]
    return out


def col2im(cols: np.ndarray, t: int, kernel: int, stride: int) -> np.ndarray:
    return _col2im_jit(np.ascontiguousarray(cols), t, kernel, stride)


@njit(cache=True)
def _ema_accumulate_jit(indices, h, k):
    n, d = h.shape
    counts = np.zeros(k, dtype=h.dtype)
    sums = np.zeros((k, d), dtype=h.dtype)
    for i in range(n):
        code = indices[i]
        counts[code] += 1.0
        for c in range(d):
            sums[code, c] += h[i, c]
    return counts, sums


def ema_accumulate(indices: np.ndarray, h: np.ndarray, k: int):
    return _ema_accumulate_jit(np.ascontiguousarray(indices), np.ascontiguousarray(h), k)
