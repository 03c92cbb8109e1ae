"""Layers, parameter containers, and the AdamW optimizer."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Parameter container with recursive discovery over attributes."""

    training: bool = True

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_params(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{key}.{i}."))
        return out

    def set_training(self, flag: bool) -> None:
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_training(flag)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(flag)
        self.training = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters in state dict: {sorted(missing)[:5]}")
        for name, tensor in params.items():
            arr = np.asarray(state[name], dtype=tensor.data.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()

    def param_count(self) -> int:
        return sum(int(np.prod(p.data.shape)) for p in self.named_params().values())


def _param(rng: np.random.Generator, shape, scale: float, dtype) -> Tensor:
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        s = float(np.sqrt(1.0 / d_in))
        self.w = _param(rng, (d_in, d_out), s, dtype)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class Conv1d(Module):
    """Temporal conv over (B, T, C); padding='same' keeps odd-kernel lengths."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | str = "same", dtype=np.float32):
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding == "same" else int(padding)
        s = float(np.sqrt(1.0 / (c_in * kernel)))
        self.w = _param(rng, (kernel * c_in, c_out), s, dtype)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ad.conv1d(x, self.w, self.b, self.kernel, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.g = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ad.layer_norm(x, self.g, self.b)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.table = Tensor((rng.standard_normal((count, dim)) * 0.02).astype(dtype), requires_grad=True)

    def __call__(self, idx: np.ndarray) -> Tensor:
        return ad.embedding(self.table, idx)


class ResConv(Module):
    """Residual temporal block: x + conv_k(silu(ln(x)))."""

    def __init__(self, width: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        self.ln = LayerNorm(width, dtype)
        self.conv = Conv1d(width, width, kernel, rng, dtype=dtype)

    def __call__(self, x) -> Tensor:
        return ad.add(x, self.conv(ad.silu(self.ln(x))))


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError("dim must divide evenly into heads")
        self.heads = heads
        self.dim = dim
        self.qkv = Linear(dim, 3 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)

    def __call__(self, x, causal: bool = False, key_valid: np.ndarray | None = None) -> Tensor:
        b, s, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x)  # (B, S, 3d)
        qkv = ad.reshape(qkv, (b, s, 3, h, dh))
        qkv = ad.swapaxes(qkv, 1, 3)  # (B, h, 3, S, dh)
        q = ad.reshape(ad.take(qkv, (slice(None), slice(None), 0)), (b * h, s, dh))
        k = ad.reshape(ad.take(qkv, (slice(None), slice(None), 1)), (b * h, s, dh))
        v = ad.reshape(ad.take(qkv, (slice(None), slice(None), 2)), (b * h, s, dh))
        scores = ad.mul(ad.matmul(q, ad.swapaxes(k, 1, 2)), 1.0 / float(np.sqrt(dh)))
        bias = np.zeros((b, 1, s, s), dtype=x.dtype)
        if causal:
            bias = bias + np.triu(np.full((s, s), -1e9, dtype=x.dtype), k=1)
        if key_valid is not None:
            bias = bias + np.where(key_valid[:, None, None, :], 0.0, -1e9).astype(x.dtype)
        scores = ad.add(ad.reshape(scores, (b, h, s, s)), Tensor(bias))
        attn = ad.softmax(scores, axis=-1)
        out = ad.matmul(ad.reshape(attn, (b * h, s, s)), v)  # (B*h, S, dh)
        out = ad.reshape(out, (b, h, s, dh))
        out = ad.swapaxes(out, 1, 2)
        out = ad.reshape(out, (b, s, d))
        return self.proj(out)


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ff_mult: int = 4, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype)
        self.attn = SelfAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.ff = FeedForward(dim, dim * ff_mult, rng, dtype)

    def __call__(self, x, causal: bool = False, key_valid: np.ndarray | None = None) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x), causal=causal, key_valid=key_valid))
        return ad.add(x, self.ff(self.ln2(x)))


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for key, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"__step__": np.array([self.step_count], dtype=np.float32)}
        for key in self.params:
            out[f"m.{key}"] = self.m[key]
            out[f"v.{key}"] = self.v[key]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["__step__"][0])
        for key in self.params:
            self.m[key] = np.asarray(state[f"m.{key}"], dtype=self.m[key].dtype).copy()
            self.v[key] = np.asarray(state[f"v.{key}"], dtype=self.v[key].dtype).copy()


def grad_check(loss_fn, params: dict[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Max relative error between backprop and central finite differences.

    ``loss_fn`` rebuilds the scalar loss from current parameter data. Intended
    for small float64 networks.
    """
    loss = loss_fn()
    for p in params.values():
        p.grad = None
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    errors: dict[str, float] = {}
    for key, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * h)
        ref = analytic[key].reshape(-1)
        denom = max(float(np.abs(fd).max()), float(np.abs(ref).max()), 1e-8)
        errors[key] = float(np.abs(fd - ref).max()) / denom
    return errors
