"""Discrete motion tokenizer: convolutional encoder, EMA vector quantizer,
conditioning decoder, and the conditional diffusion decoder, plus training."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kernels, nn
from .autodiff import Tensor
from .data import (Dataset, MotionSequence, NormalizationStats, TokenSequence,
                   normalize, pad_or_crop)
from .errors import ConfigError, LengthError, NumericError
from .schedule import NoiseSchedule, SpacedSchedule, forward_diffuse

DECODER_VARIANTS = ("conv", "diffusion_head", "diffusion_conv")
SUPPORTED_DOWNRATES = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class TokenizerConfig:
    feature_dim: int
    latent_dim: int = 128
    codebook_size: int = 1024
    downrate: int = 4
    decoder_variant: str = "diffusion_conv"
    kernel_size: int = 5
    diffusion_steps: int = 1000
    commit_weight: float = 0.02
    width: int = 128
    denoiser_blocks: int = 3
    ema_decay: float = 0.99
    max_len: int = 64
    quantize_warmup_steps: int = 150  # un-quantized steps before codebook seeding

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.downrate not in SUPPORTED_DOWNRATES:
            raise ConfigError(f"downrate must be one of {SUPPORTED_DOWNRATES}")
        if self.decoder_variant not in DECODER_VARIANTS:
            raise ConfigError(f"decoder_variant must be one of {DECODER_VARIANTS}")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(obj: dict) -> "TokenizerConfig":
        return TokenizerConfig(**obj)


def token_count(t: int, downrate: int) -> int:
    """Token sequence length for a T-frame motion: N = ceil(T / r)."""
    return -(-t // downrate)


def pad_to_multiple(frames: np.ndarray, r: int) -> np.ndarray:
    """Right-pad (T, D) or (B, T, D) with the last frame to a multiple of r."""
    t_axis = frames.ndim - 2
    t = frames.shape[t_axis]
    rem = t % r
    if rem == 0:
        return frames
    last = frames[..., -1:, :]
    reps = [1] * frames.ndim
    reps[t_axis] = r - rem
    return np.concatenate([frames, np.tile(last, reps)], axis=t_axis)


def sinusoidal_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class MotionEncoder(nn.Module):
    """Progressive temporal downsampling by stride-2 stages (one per factor of 2)."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator, dtype=np.float32):
        w = cfg.width
        k = 3
        self.in_conv = nn.Conv1d(cfg.feature_dim, w, k, rng, dtype=dtype)
        stages = []
        r = cfg.downrate
        while r > 1:
            stages.append(nn.Conv1d(w, w, 4, rng, stride=2, padding=1, dtype=dtype))
            stages.append(nn.ResConv(w, k, rng, dtype=dtype))
            r //= 2
        if not stages:
            stages.append(nn.ResConv(w, k, rng, dtype=dtype))
        self.stages = stages
        self.out_ln = nn.LayerNorm(w, dtype)
        self.out = nn.Linear(w, cfg.latent_dim, rng, dtype)

    def __call__(self, x) -> Tensor:
        h = self.in_conv(x)
        for stage in self.stages:
            h = stage(h) if isinstance(stage, nn.ResConv) else ad.silu(stage(h))
        return self.out(self.out_ln(h))


class ConditioningDecoder(nn.Module):
    """Upsampling convolutions mapping quantized latents to per-frame features."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator, dtype=np.float32):
        w = cfg.width
        k = 3
        self.downrate = cfg.downrate
        self.in_proj = nn.Linear(cfg.latent_dim, w, rng, dtype)
        stages = []
        r = cfg.downrate
        while r > 1:
            stages.append(nn.Conv1d(w, w, k, rng, dtype=dtype))
            stages.append(nn.ResConv(w, k, rng, dtype=dtype))
            r //= 2
        if not stages:
            stages.append(nn.ResConv(w, k, rng, dtype=dtype))
        self.stages = stages
        self.out_ln = nn.LayerNorm(w, dtype)
        self.out = nn.Linear(w, cfg.latent_dim, rng, dtype)

    def __call__(self, q) -> Tensor:
        h = self.in_proj(q)
        r = self.downrate
        i = 0
        while r > 1:
            h = ad.upsample_repeat(h, 2)
            h = ad.silu(self.stages[i](h))
            h = self.stages[i + 1](h)
            i += 2
            r //= 2
        if i == 0:
            h = self.stages[0](h)
        return self.out(self.out_ln(h))


class ConvMotionHead(nn.Module):
    """Direct regression decoder (the plain conv variant, no diffusion)."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator, dtype=np.float32):
        w = cfg.width
        self.in_conv = nn.Conv1d(cfg.latent_dim, w, cfg.kernel_size, rng, dtype=dtype)
        self.res1 = nn.ResConv(w, cfg.kernel_size, rng, dtype=dtype)
        self.res2 = nn.ResConv(w, cfg.kernel_size, rng, dtype=dtype)
        self.out_ln = nn.LayerNorm(w, dtype)
        self.out = nn.Linear(w, cfg.feature_dim, rng, dtype)

    def __call__(self, s) -> Tensor:
        h = ad.silu(self.in_conv(s))
        h = self.res2(self.res1(h))
        return self.out(self.out_ln(h))


class _DenoiserBlock(nn.Module):
    def __init__(self, width: int, kernel: int, temporal: bool,
                 rng: np.random.Generator, dtype=np.float32):
        self.temporal = temporal
        if temporal:
            self.res_conv = nn.ResConv(width, kernel, rng, dtype=dtype)
        self.mod = nn.Linear(width, 2 * width, rng, dtype)
        self.ln = nn.LayerNorm(width, dtype)
        self.fc1 = nn.Linear(width, 2 * width, rng, dtype)
        self.fc2 = nn.Linear(2 * width, width, rng, dtype)

    def __call__(self, h, e) -> Tensor:
        if self.temporal:
            h = self.res_conv(h)
        mod = self.mod(e)
        w = mod.shape[-1] // 2
        scale = ad.take(mod, (..., slice(0, w)))
        shift = ad.take(mod, (..., slice(w, 2 * w)))
        u = ad.add(ad.mul(self.ln(h), ad.add(scale, 1.0)), shift)
        return ad.add(h, self.fc2(ad.silu(self.fc1(u))))


class Denoiser(nn.Module):
    """Clean-motion predictor f(x_t, t, s) with AdaIN-style per-frame modulation.

    ``diffusion_head`` stays strictly per-frame; ``diffusion_conv`` interleaves
    residual temporal convolutions of the configured kernel size.
    """

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator, dtype=np.float32):
        w = cfg.width
        temporal = cfg.decoder_variant == "diffusion_conv"
        self.width = w
        self.in_proj = nn.Linear(cfg.feature_dim, w, rng, dtype)
        self.s_proj = nn.Linear(cfg.latent_dim, w, rng, dtype)
        self.t_fc1 = nn.Linear(w, w, rng, dtype)
        self.t_fc2 = nn.Linear(w, w, rng, dtype)
        self.blocks = [_DenoiserBlock(w, cfg.kernel_size, temporal, rng, dtype)
                       for _ in range(cfg.denoiser_blocks)]
        self.out_ln = nn.LayerNorm(w, dtype)
        self.out = nn.Linear(w, cfg.feature_dim, rng, dtype)

    def __call__(self, x_t, t: np.ndarray, s) -> Tensor:
        data = x_t.data if isinstance(x_t, Tensor) else x_t
        if not np.isfinite(data).all():
            raise NumericError("denoiser input contains non-finite values")
        dtype = self.out.w.data.dtype
        temb = Tensor(sinusoidal_embedding(t, self.width).astype(dtype))
        temb = self.t_fc2(ad.silu(self.t_fc1(temb)))  # (B, W)
        cond = ad.add(self.s_proj(s), ad.reshape(temb, (temb.shape[0], 1, temb.shape[1])))
        e = ad.silu(cond)  # (B, T, W)
        h = self.in_proj(x_t)
        for block in self.blocks:
            h = block(h, e)
        return self.out(self.out_ln(h))


class Quantizer:
    """EMA-updated codebook with exact nearest-neighbor assignment."""

    def __init__(self, cfg: TokenizerConfig, rng: np.random.Generator, dtype=np.float32):
        self.k = cfg.codebook_size
        self.dim = cfg.latent_dim
        self.decay = cfg.ema_decay
        self.codes = (rng.standard_normal((self.k, self.dim)) * 0.1).astype(dtype)
        self.ema_counts = np.zeros(self.k, dtype=dtype)
        self.ema_sums = self.codes.copy()
        self.initialized = False
        self.usage = np.zeros(self.k, dtype=np.int64)

    def init_from(self, latents: np.ndarray, rng: np.random.Generator) -> None:
        """k-means++ style seeding over a warmup latent sample for coverage."""
        n = latents.shape[0]
        if n <= self.k:
            idx = rng.choice(n, size=self.k, replace=True)
            self.codes = latents[idx].copy() + 1e-4 * rng.standard_normal(
                (self.k, self.dim)).astype(latents.dtype)
        else:
            chosen = [int(rng.integers(0, n))]
            d2 = ((latents - latents[chosen[0]]) ** 2).sum(axis=1)
            for _ in range(self.k - 1):
                total = float(d2.sum())
                if total <= 0:
                    chosen.append(int(rng.integers(0, n)))
                    continue
                pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
                pick = min(pick, n - 1)
                chosen.append(pick)
                d2 = np.minimum(d2, ((latents - latents[pick]) ** 2).sum(axis=1))
            self.codes = latents[np.array(chosen)].copy()
        self.ema_sums = self.codes.copy()
        self.ema_counts = np.ones(self.k, dtype=latents.dtype)
        self.initialized = True

    def assign(self, flat: np.ndarray) -> np.ndarray:
        idx, _ = kernels.nearest_codes(np.ascontiguousarray(flat), self.codes)
        return idx

    def quantize_tensor(self, latents: Tensor):
        """Straight-through quantization of (B, N, d) latents.

        Returns (q_st Tensor, commit Tensor, indices (B, N) array).
        """
        b, n, d = latents.shape
        flat = latents.data.reshape(b * n, d)
        idx = self.assign(flat)
        q = self.codes[idx].reshape(b, n, d)
        diff = ad.add(latents, Tensor(-q))
        commit = ad.reduce_mean(ad.reduce_sum(ad.mul(diff, diff), axis=-1))
        q_st = ad.add(latents, Tensor(q - latents.data))
        return q_st, commit, idx.reshape(b, n)

    def ema_update(self, flat: np.ndarray, idx: np.ndarray) -> None:
        counts, sums = kernels.ema_accumulate(idx, flat, self.k)
        self.ema_counts = self.decay * self.ema_counts + (1 - self.decay) * counts
        self.ema_sums = self.decay * self.ema_sums + (1 - self.decay) * sums
        total = self.ema_counts.sum()
        smoothed = (self.ema_counts + 1e-5) / (total + self.k * 1e-5) * total
        self.codes = (self.ema_sums / smoothed[:, None]).astype(self.codes.dtype)
        if not np.isfinite(self.codes).all():
            raise NumericError("codebook contains non-finite codes after EMA update")
        np.add.at(self.usage, idx, 1)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"quantizer.codes": self.codes,
                "quantizer.ema_counts": self.ema_counts,
                "quantizer.ema_sums": self.ema_sums}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.codes = np.asarray(state["quantizer.codes"], dtype=self.codes.dtype).copy()
        self.ema_counts = np.asarray(state["quantizer.ema_counts"], dtype=self.codes.dtype).copy()
        self.ema_sums = np.asarray(state["quantizer.ema_sums"], dtype=self.codes.dtype).copy()
        self.initialized = True


def quantize(latents: np.ndarray, codebook: np.ndarray):
    """Functional nearest-code quantization (lowest index wins ties).

    Returns (values (N, d), indices (N,), commit_loss scalar).
    """
    if latents.shape[1] != codebook.shape[1]:
        raise ConfigError("latent dim does not match codebook dim")
    idx, _ = kernels.nearest_codes(np.ascontiguousarray(latents),
                                   np.ascontiguousarray(codebook))
    values = codebook[idx]
    commit = float(((latents - values) ** 2).sum(axis=1).mean())
    return values, idx, commit


class MotionTokenizer(nn.Module):
    """Encoder + quantizer + decoder system mapping motion to tokens and back."""

    def __init__(self, cfg: TokenizerConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.dtype = dtype
        self.encoder = MotionEncoder(cfg, rng, dtype)
        self.quantizer = Quantizer(cfg, rng, dtype)
        self.cond_decoder = ConditioningDecoder(cfg, rng, dtype)
        if cfg.decoder_variant == "conv":
            self.motion_head = ConvMotionHead(cfg, rng, dtype)
            self.denoiser = None
        else:
            self.motion_head = None
            self.denoiser = Denoiser(cfg, rng, dtype)
        self.schedule = NoiseSchedule.linear(cfg.diffusion_steps)
        self.stats: NormalizationStats | None = None
        self.skeleton = None  # SkeletonDescriptor, attached at training/load
        self.fps: float = 20.0

    # -- core ops (batched, normalized feature space) -----------------------

    def encode_frames(self, frames: np.ndarray) -> Tensor:
        """(B, T, D) normalized frames -> (B, ceil(T/r), d) latents."""
        b, t, d = frames.shape
        if t < self.cfg.downrate:
            raise LengthError(f"input too short: T={t} < downrate {self.cfg.downrate}")
        padded = pad_to_multiple(frames, self.cfg.downrate)
        return self.encoder(Tensor(padded.astype(self.dtype)))

    def encode(self, motion: MotionSequence) -> np.ndarray:
        """Normalized MotionSequence -> (N, d) latent sequence."""
        return self.encode_frames(motion.frames[None]).data[0]

    def tokenize_frames(self, frames: np.ndarray) -> np.ndarray:
        latents = self.encode_frames(frames)
        b, n, d = latents.shape
        idx = self.quantizer.assign(latents.data.reshape(b * n, d))
        return idx.reshape(b, n)

    def tokenize(self, motion: MotionSequence) -> TokenSequence:
        idx = self.tokenize_frames(motion.frames[None])[0]
        return TokenSequence(idx, motion.length)

    def decode_conditioning(self, tokens: np.ndarray, target_t: int) -> Tensor:
        """(B, N) token indices -> (B, target_t, d) frame conditioning."""
        b, n = tokens.shape
        capacity = n * self.cfg.downrate
        if target_t > capacity:
            raise LengthError(f"target_T={target_t} exceeds token capacity {capacity}")
        q = Tensor(self.quantizer.codes[tokens.reshape(-1)].reshape(b, n, -1))
        s = self.cond_decoder(q)
        if target_t < s.shape[1]:
            s = ad.take(s, (slice(None), slice(0, target_t)))
        return s

    def diffusion_sample(self, s: Tensor | np.ndarray, rng: np.random.Generator,
                         sampler: str = "spaced_27", refine_fn=None) -> np.ndarray:
        """Reverse diffusion conditioned on s; returns (B, T, D) frames.

        ``refine_fn(x0_hat) -> x0_hat`` is applied to each clean-motion
        prediction before the posterior step (decode-time control hook).
        """
        if self.denoiser is None:
            raise ConfigError("conv decoder variant has no diffusion sampler")
        s_data = s.data if isinstance(s, Tensor) else np.asarray(s)
        s_t = Tensor(s_data.astype(self.dtype))
        b, t, _ = s_data.shape
        if sampler == "spaced_27":
            spaced = SpacedSchedule.from_base(self.schedule, 27)
        elif sampler == "full_1000":
            spaced = SpacedSchedule.from_base(self.schedule, self.schedule.steps)
        else:
            raise ConfigError(f"unknown sampler {sampler!r}")
        x = rng.standard_normal((b, t, self.cfg.feature_dim)).astype(self.dtype)
        for i in range(spaced.steps - 1, -1, -1):
            t_vec = np.full(b, spaced.timesteps[i], dtype=np.int64)
            x0_hat = self.denoiser(Tensor(x), t_vec, s_t).data
            if refine_fn is not None:
                x0_hat = refine_fn(x0_hat)
            mean, var = spaced.posterior(x0_hat, x, i)
            if i > 0:
                noise = rng.standard_normal(x.shape)
                x = (mean + np.sqrt(var) * noise).astype(self.dtype)
            else:
                x = mean.astype(self.dtype)
        return x

    def decode_tokens(self, tokens: np.ndarray, target_t: int,
                      rng: np.random.Generator, sampler: str = "spaced_27",
                      refine_fn=None) -> np.ndarray:
        """(B, N) tokens -> (B, target_t, D) normalized frames."""
        s = self.decode_conditioning(tokens, target_t)
        if self.cfg.decoder_variant == "conv":
            return self.motion_head(s).data
        return self.diffusion_sample(s, rng, sampler, refine_fn)

    def reconstruct_frames(self, frames: np.ndarray, rng: np.random.Generator,
                           sampler: str = "spaced_27") -> np.ndarray:
        tokens = self.tokenize_frames(frames)
        return self.decode_tokens(tokens, frames.shape[1], rng, sampler)

    def reconstruct(self, motion: MotionSequence, rng: np.random.Generator,
                    sampler: str = "spaced_27") -> MotionSequence:
        out = self.reconstruct_frames(motion.frames[None], rng, sampler)[0]
        return MotionSequence(out, motion.fps, motion.skeleton)

    # -- persistence ---------------------------------------------------------

    def full_state(self) -> dict[str, np.ndarray]:
        state = self.state_dict()
        state.update(self.quantizer.state_arrays())
        if self.stats is not None:
            state["stats.mean"] = self.stats.mean
            state["stats.std"] = self.stats.std
        return state

    def load_full_state(self, state: dict[str, np.ndarray]) -> None:
        self.quantizer.load_state_arrays(state)
        if "stats.mean" in state:
            self.stats = NormalizationStats(np.asarray(state["stats.mean"], dtype=np.float64),
                                            np.asarray(state["stats.std"], dtype=np.float64))
        own = {k: v for k, v in state.items()
               if not k.startswith("quantizer.") and not k.startswith("stats.")}
        self.load_state_dict(own)


def _masked_smooth_l1(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """Mean Smooth-L1 over valid frames only; valid is (B, T) bool."""
    elementwise = ad.smooth_l1(pred, Tensor(target))
    w = valid[..., None].astype(target.dtype)
    total = ad.reduce_sum(ad.mul(elementwise, Tensor(w)))
    count = float(w.sum()) * target.shape[-1]
    return ad.mul(total, 1.0 / max(count, 1.0))


@dataclass
class TrainReport:
    steps: int = 0
    losses: list = field(default_factory=list)
    dead_code_fraction: float = 1.0
    seconds: float = 0.0


class TokenizerTrainer:
    """Single-writer training loop: diffusion (or regression) loss + commitment."""

    def __init__(self, model: MotionTokenizer, dataset: Dataset, seed: int = 0,
                 batch_size: int = 16, lr: float = 2e-4, lr_final: float = 2e-5,
                 decay_fraction: float = 20.0 / 24.0, freeze_encoder: bool = False):
        self.model = model
        self.dataset = dataset
        self.rng = np.random.default_rng(seed)
        self.batch_size = batch_size
        self.lr = lr
        self.lr_final = lr_final
        self.decay_fraction = decay_fraction
        self.freeze_encoder = freeze_encoder
        if model.stats is None:
            model.stats = dataset.normalization
        if model.skeleton is None:
            model.skeleton = dataset.skeleton
            model.fps = dataset.fps
        self.train_items = dataset.split("train")
        self.step_idx = 0
        params = model.named_params()
        if freeze_encoder:
            params = {k: v for k, v in params.items() if not k.startswith("encoder.")}
        self.opt = nn.AdamW(params, lr=lr)

    def _batch(self):
        idx = self.rng.integers(0, len(self.train_items), size=self.batch_size)
        t_max = self.model.cfg.max_len
        stats = self.model.stats
        frames = np.zeros((self.batch_size, t_max, self.model.cfg.feature_dim), dtype=self.model.dtype)
        valid = np.zeros((self.batch_size, t_max), dtype=bool)
        for row, i in enumerate(idx):
            item = self.train_items[int(i)]
            x = normalize(item.motion, stats).frames
            frames[row], valid[row] = pad_or_crop(x, t_max, self.rng)
        return frames, valid

    def _warmup_codebook(self) -> None:
        """Seed the codebook from a broad latent sample before the first update."""
        samples = []
        for _ in range(8):
            frames, _ = self._batch()
            latents = self.model.encode_frames(frames)
            samples.append(latents.data.reshape(-1, latents.shape[-1]))
        self.model.quantizer.init_from(np.concatenate(samples, axis=0), self.rng)

    def train_step(self, frames: np.ndarray, valid: np.ndarray) -> dict[str, float]:
        model = self.model
        cfg = model.cfg
        warming = (not self.freeze_encoder
                   and self.step_idx < cfg.quantize_warmup_steps
                   and not model.quantizer.initialized)
        if not warming and not self.freeze_encoder and not model.quantizer.initialized:
            self._warmup_codebook()
        latents = model.encode_frames(frames)
        b, n, d = latents.shape
        if warming:
            # autoencoder warmup: quantization joins once latents settle
            q_st, commit, idx = latents, Tensor(np.zeros((), dtype=model.dtype)), None
        else:
            q_st, commit, idx = model.quantizer.quantize_tensor(latents)
        s = model.cond_decoder(q_st)
        t_cap = frames.shape[1]
        if s.shape[1] > t_cap:
            s = ad.take(s, (slice(None), slice(0, t_cap)))
        if cfg.decoder_variant == "conv":
            pred = model.motion_head(s)
            l_diff = _masked_smooth_l1(pred, frames, valid)
        else:
            t_vec = self.rng.integers(0, cfg.diffusion_steps, size=b)
            noise = self.rng.standard_normal(frames.shape).astype(model.dtype)
            x_t = forward_diffuse(frames, t_vec, noise, model.schedule).astype(model.dtype)
            pred = model.denoiser(Tensor(x_t), t_vec, s)
            l_diff = _masked_smooth_l1(pred, frames, valid)
        loss = ad.add(l_diff, ad.mul(commit, cfg.commit_weight))
        if not np.isfinite(loss.data):
            raise NumericError(f"non-finite training loss at step {self.opt.step_count}")
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.step_idx += 1
        if idx is not None and not self.freeze_encoder:
            model.quantizer.ema_update(latents.data.reshape(b * n, d), idx.reshape(-1))
        return {"L_diff": float(l_diff.data), "L_commit": float(commit.data),
                "L_total": float(loss.data)}

    def run(self, steps: int, log_every: int = 0) -> TrainReport:
        report = TrainReport()
        start = time.time()
        decay_at = int(self.decay_fraction * steps)
        self.model.set_training(True)
        self.model.quantizer.usage[:] = 0
        for step in range(steps):
            self.opt.lr = self.lr if step < decay_at else self.lr_final
            frames, valid = self._batch()
            losses = self.train_step(frames, valid)
            report.losses.append(losses["L_total"])
            if log_every and (step + 1) % log_every == 0:
                dead = float((self.model.quantizer.usage == 0).mean())
                print(f"  step {step + 1}/{steps} L_total={losses['L_total']:.4f} "
                      f"L_diff={losses['L_diff']:.4f} dead_codes={dead:.2f}", flush=True)
        report.steps = steps
        report.dead_code_fraction = float((self.model.quantizer.usage == 0).mean())
        report.seconds = time.time() - start
        self.model.set_training(False)
        return report


def freeze_and_retrain_decoder(model: MotionTokenizer, dataset: Dataset,
                               stage2_variant: str, steps: int, seed: int = 0,
                               batch_size: int = 16, lr: float = 2e-4) -> MotionTokenizer:
    """Stage-2 protocol: keep encoder + codebook bit-identical, train a fresh
    decoder of ``stage2_variant`` on the frozen tokens."""
    cfg2 = replace(model.cfg, decoder_variant=stage2_variant)
    stage2 = MotionTokenizer(cfg2, seed=seed + 1, dtype=model.dtype)
    enc_state = {k: v for k, v in model.state_dict().items() if k.startswith("encoder.")}
    full = stage2.state_dict()
    full.update(enc_state)
    stage2.load_state_dict(full)
    stage2.quantizer.load_state_arrays(model.quantizer.state_arrays())
    stage2.stats = model.stats
    stage2.skeleton = model.skeleton
    stage2.fps = model.fps
    trainer = TokenizerTrainer(stage2, dataset, seed=seed, batch_size=batch_size,
                               lr=lr, freeze_encoder=True)
    trainer.run(steps)
    return stage2
