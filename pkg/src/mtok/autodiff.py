"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for the networks in this package: broadcast-aware
elementwise ops, (batched) matmul, gather/scatter indexing, fused layernorm /
softmax / conv1d primitives. Arrays keep their dtype, so the same graphs run in
float32 for training and float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free intermediate graph references as we go
            node._parents = ()
            node._backward = None

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # own the buffer: g may alias another node's grad (pass-through ops)
        t.grad = np.array(g)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    # python scalars stay raw so numpy's weak promotion preserves f32 graphs
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        data = a.data + b

        def backward(g):
            _acc(a, g)

        return _make(data, (a,), backward)
    if isinstance(a, (int, float)):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        data = a.data * b

        def backward(g):
            _acc(a, g * b)

        return _make(data, (a,), backward)
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**exponent

    def backward(g):
        _acc(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            _acc(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            _acc(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        _acc(a, g.reshape(old))

    return _make(data, (a,), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    data = a.data.swapaxes(ax1, ax2)

    def backward(g):
        _acc(a, g.swapaxes(ax1, ax2))

    return _make(data, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            _acc(t, g[tuple(sl)])
            start += s

    return _make(data, tuple(tensors), backward)


def take(a, idx) -> Tensor:
    """Indexing/gather; backward scatter-adds into the source."""
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _acc(a, full)

    return _make(data, (a,), backward)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    return take(table, np.asarray(idx))


# -- reductions ---------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))

    return _make(data, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(reduce_sum(a, axis, keepdims), 1.0 / float(count))


# -- elementwise nonlinearities ----------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _acc(a, g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _acc(a, g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        _acc(a, g * 0.5 / data)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        _acc(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        _acc(a, g * (a.data > 0))

    return _make(data, (a,), backward)


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def backward(g):
        _acc(a, g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _make(data, (a,), backward)


def gelu(a) -> Tensor:
    """tanh-approximation GELU (smooth, FD-friendly)."""
    a = as_tensor(a)
    c = float(np.sqrt(2.0 / np.pi))
    x = a.data
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _acc(a, g * d)

    return _make(data, (a,), backward)


# -- fused primitives ----------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _acc(a, data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        _acc(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned scale/shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _acc(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _acc(beta, g.sum(axis=axes))
        if x.requires_grad:
            n = x.data.shape[-1]
            gx = g * gamma.data
            t1 = gx - gx.mean(axis=-1, keepdims=True)
            t2 = xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _acc(x, inv * (t1 - t2))

    return _make(data, (x, gamma, beta), backward)


def conv1d(x, w, b, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Temporal convolution on (B, T, C_in) with weight (kernel*C_in, C_out)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (0, 0)))
    cols = kernels.im2col(xp, kernel, stride)
    data = cols @ w.data + b.data
    t_pad = xp.shape[1]

    def backward(g):
        if b.requires_grad:
            _acc(b, g.sum(axis=(0, 1)))
        if w.requires_grad:
            kc = cols.shape[-1]
            _acc(w, cols.reshape(-1, kc).T @ g.reshape(-1, g.shape[-1]))
        if x.requires_grad:
            dcols = g @ w.data.T
            dxp = kernels.col2im(np.ascontiguousarray(dcols), t_pad, kernel, stride)
            if padding:
                dxp = dxp[:, padding : t_pad - padding, :]
            _acc(x, dxp)

    return _make(data, (x, w, b), backward)


def upsample_repeat(x, factor: int) -> Tensor:
    """Nearest-neighbor upsampling along the time axis of (B, T, C)."""
    x = as_tensor(x)
    data = np.repeat(x.data, factor, axis=1)

    def backward(g):
        b, tf, c = g.shape
        _acc(x, g.reshape(b, tf // factor, factor, c).sum(axis=2))

    return _make(data, (x,), backward)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Elementwise Smooth-L1: 0.5 d^2/beta for |d| < beta, else |d| - beta/2."""
    pred = as_tensor(pred)
    target = as_tensor(target).data
    d = pred.data - target
    ad = np.abs(d)
    small = ad < beta
    data = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)

    def backward(g):
        _acc(pred, g * np.where(small, d / beta, np.sign(d)))

    return _make(data, (pred,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over rows of (M, K) logits.

    ``weights`` (M,) scales each row's contribution; the mean divides by the
    weight total so fully-masked rows drop out.
    """
    targets = np.asarray(targets)
    ls = log_softmax(logits, axis=-1)
    picked = take(ls, (np.arange(targets.shape[0]), targets))
    if weights is None:
        return mul(reduce_sum(picked), -1.0 / max(1, targets.shape[0]))
    wt = float(weights.sum())
    return mul(reduce_sum(mul(picked, weights)), -1.0 / max(wt, 1e-12))


def dropout(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, keep)
