"""Hot numeric kernels with selectable backends.

The package ships two implementations of every kernel: a pure-numpy one and a
numba ``@njit`` one. The active backend is chosen at import time from the
``MTOK_KERNELS`` environment variable:

* ``auto`` (default): numba when importable, numpy otherwise
* ``numba``: force numba, fail loudly if unavailable
* ``numpy``: force the pure-numpy fallback

``benchmarks/bench_kernels.py`` times the two side by side.
"""

from __future__ import annotations

import os

from . import numpy_backend

_FUNCS = ("nearest_codes", "im2col", "col2im", "ema_accumulate")


def _resolve(name: str):
    if name == "numpy":
        return numpy_backend
    try:
        from . import numba_backend
    except ImportError:
        if name == "numba":
            raise
        return numpy_backend
    return numba_backend


def _requested() -> str:
    value = os.environ.get("MTOK_KERNELS", "auto").strip().lower()
    if value not in ("auto", "numba", "numpy"):
        raise ValueError(f"MTOK_KERNELS must be auto|numba|numpy, got {value!r}")
    return value


_impl = _resolve(_requested())


def backend_name() -> str:
    return "numpy" if _impl is numpy_backend else "numba"


def set_backend(name: str) -> None:
    """Force a backend at runtime (tests and benchmarks)."""
    global _impl, nearest_codes, im2col, col2im, ema_accumulate
    _impl = _resolve(name)
    for fn in _FUNCS:
        globals()[fn] = getattr(_impl, fn)


nearest_codes = _impl.nearest_codes
im2col = _impl.im2col
col2im = _impl.col2im
ema_accumulate = _impl.ema_accumulate
