"""Pure-numpy reference implementations of the hot kernels."""

from __future__ import annotations

import numpy as np


def nearest_codes(h: np.ndarray, codes: np.ndarray):
    """Exact nearest-code assignment under squared Euclidean distance.

    Ties resolve to the lowest code index (argmin keeps the first minimum).

    Args:
        h: (N, d) query latents.
        codes: (K, d) codebook.

    Returns:
        (indices (N,) int64, sq_dists (N,) same dtype as h)
    """
    # Direct (N, K, d) expansion keeps the distance exact for tie-breaking;
    # chunk over N to bound the temporary.
    n = h.shape[0]
    indices = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=h.dtype)
    chunk = max(1, int(4e6 / max(1, codes.size)))
    for start in range(0, n, chunk):
        block = h[start : start + chunk]
        d2 = ((block[:, None, :] - codes[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        indices[start : start + chunk] = idx
        dists[start : start + chunk] = d2[np.arange(block.shape[0]), idx]
    return indices, dists


def im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Gather sliding windows of a (B, T, C) sequence into (B, T_out, kernel*C).

    ``x`` must already carry any padding; T_out = (T - kernel)//stride + 1.
    """
    b, t, c = x.shape
    t_out = (t - kernel) // stride + 1
    idx = np.arange(t_out)[:, None] * stride + np.arange(kernel)[None, :]
    cols = x[:, idx, :]  # (B, T_out, k, C)
    return np.ascontiguousarray(cols.reshape(b, t_out, kernel * c))


def col2im(cols: np.ndarray, t: int, kernel: int, stride: int) -> np.ndarray:
    """Scatter-add the adjoint of :func:`im2col` back onto a (B, t, C) array."""
    b, t_out, kc = cols.shape
    c = kc // kernel
    out = np.zeros((b, t, c), dtype=cols.dtype)
    shaped = cols.reshape(b, t_out, kernel, c)
    idx = np.arange(t_out)[:, None] * stride + np.arange(kernel)[None, :]
    np.add.at(out, (slice(None), idx), shaped)
    return out


def ema_accumulate(indices: np.ndarray, h: np.ndarray, k: int):
    """Per-code assignment counts and latent sums for the EMA codebook update.

    Args:
        indices: (N,) code assignments.
        h: (N, d) latents.
        k: codebook size.

    Returns:
        (counts (K,), sums (K, d)) in h's dtype.
    """
    counts = np.bincount(indices, minlength=k).astype(h.dtype)
    sums = np.zeros((k, h.shape[1]), dtype=h.dtype)
    np.add.at(sums, indices, h)
    return counts, sums
