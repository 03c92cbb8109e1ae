"""Backend parity: the numba kernels must match the numpy fallbacks."""

import numpy as np
import pytest

from mtok.kernels import numba_backend, numpy_backend

BACKENDS = {"numpy": numpy_backend, "numba": numba_backend}


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    return BACKENDS[request.param]


def test_nearest_codes_matches_bruteforce(backend):
    rng = np.random.default_rng(0)
    for _ in range(30):
        n, k, d = rng.integers(1, 40), rng.integers(2, 32), rng.integers(1, 12)
        h = rng.standard_normal((n, d))
        codes = rng.standard_normal((k, d))
        idx, dist = backend.nearest_codes(h, codes)
        ref = ((h[:, None, :] - codes[None, :, :]) ** 2).sum(axis=2)
        assert np.array_equal(idx, ref.argmin(axis=1))
        assert np.allclose(dist, ref.min(axis=1), rtol=1e-12, atol=0)


def test_nearest_codes_tie_breaks_to_lowest_index(backend):
    codes = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    h = np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]])
    idx, _ = backend.nearest_codes(h, codes)
    assert idx.tolist() == [0, 0, 1]


def test_backends_agree_on_indices():
    rng = np.random.default_rng(3)
    h = rng.standard_normal((200, 8)).astype(np.float32)
    codes = rng.standard_normal((64, 8)).astype(np.float32)
    i1, d1 = numpy_backend.nearest_codes(h, codes)
    i2, d2 = numba_backend.nearest_codes(h, codes)
    assert np.array_equal(i1, i2)
    assert np.allclose(d1, d2, rtol=1e-5)


@pytest.mark.parametrize("kernel,stride", [(3, 1), (5, 1), (4, 2), (5, 2), (1, 1)])
def test_im2col_matches(kernel, stride):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 17, 5)).astype(np.float32)
    a = numpy_backend.im2col(x, kernel, stride)
    b = numba_backend.im2col(x, kernel, stride)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("impl", ["numpy", "numba"])
def test_col2im_is_im2col_adjoint(impl):
    # <im2col(x), y> == <x, col2im(y)> for all x, y
    backend = BACKENDS[impl]
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 13, 4))
    kernel, stride = 5, 2
    cols = backend.im2col(x, kernel, stride)
    y = rng.standard_normal(cols.shape)
    lhs = float((cols * y).sum())
    back = backend.col2im(y, 13, kernel, stride)
    rhs = float((x * back).sum())
    assert abs(lhs - rhs) < 1e-9


def test_col2im_backends_agree():
    rng = np.random.default_rng(4)
    cols = rng.standard_normal((2, 7, 12)).astype(np.float32)
    a = numpy_backend.col2im(cols, 16, 4, 2)
    b = numba_backend.col2im(cols, 16, 4, 2)
    assert np.allclose(a, b, atol=1e-6)


def test_ema_accumulate(backend):
    rng = np.random.default_rng(5)
    idx = rng.integers(0, 10, size=50)
    h = rng.standard_normal((50, 3))
    counts, sums = backend.ema_accumulate(idx, h, 10)
    for code in range(10):
        rows = idx == code
        assert counts[code] == rows.sum()
        assert np.allclose(sums[code], h[rows].sum(axis=0) if rows.any() else 0.0)


def test_env_flag_selects_backend(monkeypatch):
    import importlib

    import mtok.kernels as kpkg

    monkeypatch.setenv("MTOK_KERNELS", "numpy")
    importlib.reload(kpkg)
    assert kpkg.backend_name() == "numpy"
    monkeypatch.setenv("MTOK_KERNELS", "numba")
    importlib.reload(kpkg)
    assert kpkg.backend_name() == "numba"
    monkeypatch.setenv("MTOK_KERNELS", "bogus")
    with pytest.raises(ValueError):
        importlib.reload(kpkg)
    monkeypatch.delenv("MTOK_KERNELS")
    importlib.reload(kpkg)


def test_set_backend_switches_functions():
    from mtok import kernels

    kernels.set_backend("numpy")
    assert kernels.backend_name() == "numpy"
    kernels.set_backend("numba")
    assert kernels.backend_name() == "numba"
