"""Token-space planning: condition encoders, unified condition injection,
masked discrete-diffusion and autoregressive planners, and classifier-free
guidance with alternating condition pairs."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .data import Dataset, LocalCondition, normalize, pad_or_crop, sample_control_spec
from .errors import ConfigError, NumericError, SchemaError

MODES = ("ddm", "ar")

# Appendix sweep optima per (mode, downrate), used as config defaults.
DEFAULT_GUIDANCE = {
    ("ddm", 1): 3.6, ("ddm", 2): 3.2, ("ddm", 4): 2.6, ("ddm", 8): 2.0, ("ddm", 16): 1.8,
    ("ar", 2): 3.2, ("ar", 4): 2.0, ("ar", 8): 1.8, ("ar", 16): 1.6,
}


@dataclass(frozen=True)
class PlannerConfig:
    mode: str
    codebook_size: int
    downrate: int
    max_tokens: int
    joint_count: int
    text_dim: int = 128
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 4
    cond_dropout: float = 0.1
    token_replace: float | None = None  # defaults: 0.1 ddm, 0.2 ar
    inference_steps: int = 10
    guidance_scale: float | None = None
    traj_dropout: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"planner mode must be one of {MODES}")
        if self.token_replace is None:
            object.__setattr__(self, "token_replace", 0.1 if self.mode == "ddm" else 0.2)
        if self.guidance_scale is None:
            object.__setattr__(self, "guidance_scale",
                               DEFAULT_GUIDANCE.get((self.mode, self.downrate), 2.0))

    @property
    def mask_token(self) -> int:
        return self.codebook_size

    @property
    def end_token(self) -> int:
        return self.codebook_size

    @property
    def vocab_out(self) -> int:
        return self.codebook_size + (1 if self.mode == "ar" else 0)

    @property
    def traj_channels(self) -> int:
        return self.joint_count * 4  # zero-filled xyz targets + mask channel per joint

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(obj: dict) -> "PlannerConfig":
        return PlannerConfig(**obj)


@dataclass
class ConditionEmbeddings:
    """Planner-dim condition features; absent parts carry None.

    m_g may be a raw (B, d_model) array or a Tensor carrying gradients;
    m_s is a Tensor so the trajectory encoder trains through it.
    """

    m_g: np.ndarray | Tensor | None
    m_s: Tensor | None
    present_g: bool = True
    present_s: bool = True


@dataclass
class PlannerInput:
    embeddings: Tensor  # (B, N+1, d_model)
    key_valid: np.ndarray  # (B, N+1) bool
    mode: str


@dataclass(frozen=True)
class CfgPair:
    cond: tuple[bool, bool]  # (use_global, use_local)
    uncond: tuple[bool, bool]
    label: str  # A | B | single


def mask_fraction(u: float) -> float:
    """Cosine masking schedule: fraction of tokens masked at progress u."""
    return math.cos(math.pi * u / 2.0)


def cfg_combine(out_cond: np.ndarray, out_uncond: np.ndarray, w: float) -> np.ndarray:
    """uncond + w * (cond - uncond) in logit space; w=1 and w=0 are exact."""
    if out_cond.shape != out_uncond.shape:
        raise SchemaError("CFG branches must have identical shapes")
    if w == 1.0:
        return out_cond
    if w == 0.0:
        return out_uncond
    return out_uncond + w * (out_cond - out_uncond)


def sample_cfg_pair(present_g: bool, present_s: bool, rng: np.random.Generator) -> CfgPair | None:
    """Alternating guidance pairs: with both conditions present, pair A drops
    only the global condition in the uncond branch, pair B only the local."""
    if present_g and present_s:
        if rng.random() < 0.5:
            return CfgPair(cond=(True, True), uncond=(False, True), label="A")
        return CfgPair(cond=(True, True), uncond=(True, False), label="B")
    if present_g:
        return CfgPair(cond=(True, False), uncond=(False, False), label="single")
    if present_s:
        return CfgPair(cond=(False, True), uncond=(False, False), label="single")
    return None


def sample_condition_dropout(rng: np.random.Generator, p: float) -> bool:
    """True when a condition should be replaced by its learned null embedding."""
    return bool(rng.random() < p)


def corrupt_tokens(tokens: np.ndarray, rate: float, codebook_size: int,
                   rng: np.random.Generator, eligible: np.ndarray | None = None) -> np.ndarray:
    """Replace a Bernoulli(rate) subset of eligible tokens with random tokens."""
    pick = rng.random(tokens.shape) < rate
    if eligible is not None:
        pick &= eligible
    out = tokens.copy()
    out[pick] = rng.integers(0, codebook_size, size=int(pick.sum()))
    return out


class TrajectoryEncoder(nn.Module):
    """Token-aligned local-condition features via the same conv downsampling as
    the motion encoder; input is zero-filled targets with mask channels."""

    def __init__(self, cfg: PlannerConfig, rng: np.random.Generator, dtype=np.float32):
        w = cfg.d_model
        self.dropout_p = cfg.traj_dropout
        self.in_conv = nn.Conv1d(cfg.traj_channels, w, 3, rng, dtype=dtype)
        stages = []
        r = cfg.downrate
        while r > 1:
            stages.append(nn.Conv1d(w, w, 4, rng, stride=2, padding=1, dtype=dtype))
            stages.append(nn.ResConv(w, 3, rng, dtype=dtype))
            r //= 2
        if not stages:
            stages.append(nn.ResConv(w, 3, rng, dtype=dtype))
        self.stages = stages
        self.out_ln = nn.LayerNorm(w, dtype)

    def __call__(self, x: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        h = self.in_conv(Tensor(x.astype(np.float32)))
        for stage in self.stages:
            h = stage(h) if isinstance(stage, nn.ResConv) else ad.silu(stage(h))
        h = self.out_ln(h)
        if self.training and rng is not None:
            h = ad.dropout(h, self.dropout_p, rng, True)
        return h


def local_condition_channels(local: LocalCondition, joint_count: int) -> np.ndarray:
    """(T, J*4) planner input: masked targets zero-filled, then mask bits."""
    t = local.targets.shape[0]
    filled = np.where(local.mask[:, :, None], local.targets, 0.0)
    return np.concatenate([filled.reshape(t, -1),
                           local.mask.astype(np.float64)], axis=1).astype(np.float32)


class TokenPlanner(nn.Module):
    """Unified planner: shared condition interface over DDM and AR backbones."""

    def __init__(self, cfg: PlannerConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.dtype = dtype
        self.tok_emb = nn.Embedding(cfg.codebook_size + 1, cfg.d_model, rng, dtype)
        self.pos_emb = Tensor((rng.standard_normal((cfg.max_tokens + 1, cfg.d_model)) * 0.02
                               ).astype(dtype), requires_grad=True)
        self.null_global = Tensor((rng.standard_normal(cfg.d_model) * 0.02).astype(dtype),
                                  requires_grad=True)
        self.null_local = Tensor((rng.standard_normal(cfg.d_model) * 0.02).astype(dtype),
                                 requires_grad=True)
        self.g_proj = nn.Linear(cfg.text_dim, cfg.d_model, rng, dtype)
        self.traj_encoder = TrajectoryEncoder(cfg, rng, dtype)
        self.blocks = [nn.TransformerBlock(cfg.d_model, cfg.n_heads, rng, cfg.ff_mult, dtype)
                       for _ in range(cfg.n_layers)]
        self.final_ln = nn.LayerNorm(cfg.d_model, dtype)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_out, rng, dtype)

    # -- condition plumbing ---------------------------------------------------

    def embed_global(self, text_embedding: np.ndarray | None) -> np.ndarray | None:
        """Project a raw text embedding into planner space."""
        if text_embedding is None:
            return None
        arr = np.asarray(text_embedding, dtype=self.dtype)
        if arr.ndim == 1:
            arr = arr[None]
        return self.g_proj(Tensor(arr)).data

    def encode_trajectory(self, channels: np.ndarray,
                          rng: np.random.Generator | None = None) -> Tensor:
        """(B, T, J*4) channels -> (B, ceil(T/r), d_model) token-aligned features."""
        if channels.shape[-1] != self.cfg.traj_channels:
            raise SchemaError(f"trajectory channels must be {self.cfg.traj_channels}")
        return self.traj_encoder(channels, rng)

    def local_len(self, n_tokens: int) -> int:
        """Local-feature rows consumed for n tokens (the AR shift adds one)."""
        return n_tokens if self.cfg.mode == "ddm" else n_tokens + 1

    def null_local_features(self, b: int, length: int) -> Tensor:
        row = ad.reshape(self.null_local, (1, 1, self.cfg.d_model))
        return ad.add(row, Tensor(np.zeros((b, length, 1), dtype=self.dtype)))

    def resolve_conditions(self, m_g, m_s: Tensor | None, use_g: bool, use_s: bool,
                           b: int, n_tokens: int) -> ConditionEmbeddings:
        """Dropped or absent conditions become the learned null embeddings."""
        g = m_g if (use_g and m_g is not None) else None
        length = self.local_len(n_tokens)
        if use_s and m_s is not None:
            s = m_s
        else:
            s = self.null_local_features(b, length)
        return ConditionEmbeddings(m_g=g, m_s=s, present_g=g is not None, present_s=True)

    def build_planner_input(self, tokens: np.ndarray, cond: ConditionEmbeddings,
                            token_valid: np.ndarray | None = None) -> PlannerInput:
        """Fuse token embeddings with conditions per the planning interface.

        DDM: H[0] = M_g; H[1+n] = emb(z_n or MASK) + M_s[n] + p_n.
        AR: the local feature for each token is added one input position
        earlier, so the first token's feature lands on the global slot.
        """
        b, n = tokens.shape
        if n > self.cfg.max_tokens:
            raise ConfigError(f"token length {n} exceeds max_tokens {self.cfg.max_tokens}")
        d = self.cfg.d_model
        dtype = self.dtype
        tok = self.tok_emb(tokens)  # (B, N, d)
        if cond.present_g and cond.m_g is not None:
            g_row = cond.m_g if isinstance(cond.m_g, Tensor) else Tensor(
                np.broadcast_to(np.asarray(cond.m_g, dtype=dtype), (b, d)).copy())
        else:
            g_row = ad.add(ad.reshape(self.null_global, (1, d)),
                           Tensor(np.zeros((b, 1), dtype=dtype)))
        g_row = ad.reshape(g_row, (b, 1, d))
        m_s = cond.m_s if (cond.present_s and cond.m_s is not None) else None
        if self.cfg.mode == "ddm":
            if m_s is not None:
                if m_s.shape[1] != n:
                    raise SchemaError(f"local features length {m_s.shape[1]} != token length {n}")
                tok = ad.add(tok, m_s)
            if n:
                pos = ad.take(self.pos_emb, slice(0, n))
                tok = ad.add(tok, ad.reshape(pos, (1, n, d)))
            h = ad.concat([g_row, tok], axis=1) if n else g_row
        else:
            h = ad.concat([g_row, tok], axis=1) if n else g_row
            if m_s is not None:
                want = n + 1
                if m_s.shape[1] == want - 1:  # no feature for the final slot
                    m_s = ad.concat([m_s, Tensor(np.zeros((b, 1, d), dtype=dtype))], axis=1)
                elif m_s.shape[1] != want:
                    raise SchemaError(
                        f"local features length {m_s.shape[1]} incompatible with {n} tokens")
                h = ad.add(h, m_s)
            pos = ad.take(self.pos_emb, slice(0, n + 1))
            h = ad.add(h, ad.reshape(pos, (1, n + 1, d)))
        if token_valid is None:
            key_valid = np.ones((b, n + 1), dtype=bool)
        else:
            key_valid = np.concatenate([np.ones((b, 1), dtype=bool), token_valid], axis=1)
        return PlannerInput(embeddings=h, key_valid=key_valid, mode=self.cfg.mode)

    def forward(self, planner_input: PlannerInput) -> Tensor:
        """Logits: (B, N, K) at motion slots for DDM; (B, N+1, K+1) next-token
        predictions for AR."""
        h = planner_input.embeddings
        causal = self.cfg.mode == "ar"
        for block in self.blocks:
            h = block(h, causal=causal, key_valid=planner_input.key_valid)
        h = self.final_ln(h)
        logits = self.head(h)
        if self.cfg.mode == "ddm":
            logits = ad.take(logits, (slice(None), slice(1, None)))
        return logits

    def logits(self, tokens: np.ndarray, cond: ConditionEmbeddings,
               token_valid: np.ndarray | None = None) -> np.ndarray:
        out = self.forward(self.build_planner_input(tokens, cond, token_valid))
        if not np.isfinite(out.data).all():
            raise NumericError("planner produced non-finite logits")
        return out.data


def _gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(np.maximum(u, 1e-12)) + 1e-12)


def _categorical(logits: np.ndarray, rng: np.random.Generator,
                 temperature: float) -> np.ndarray:
    """Sample along the last axis; temperature 0 is argmax."""
    if temperature <= 0.0:
        return logits.argmax(axis=-1)
    return (logits / temperature + _gumbel(rng, logits.shape)).argmax(axis=-1)


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class GenerateStats:
    forward_passes: int = 0


def ddm_generate(model: TokenPlanner, n: int, rng: np.random.Generator,
                 m_g: np.ndarray | None = None, m_s: Tensor | None = None,
                 w: float | None = None, steps: int | None = None, batch: int = 1,
                 temperature: float = 1.0, stats: GenerateStats | None = None) -> np.ndarray:
    """Iterative unmasking: predict every masked slot, keep the most confident
    predictions per the cosine schedule, remask the rest. Returns (batch, n)."""
    cfg = model.cfg
    if cfg.mode != "ddm":
        raise ConfigError("ddm_generate requires a ddm planner")
    w = cfg.guidance_scale if w is None else w
    steps = cfg.inference_steps if steps is None else steps
    present_g = m_g is not None
    present_s = m_s is not None
    tokens = np.full((batch, n), cfg.mask_token, dtype=np.int64)
    fixed = np.zeros((batch, n), dtype=bool)
    for i in range(steps):
        pair = sample_cfg_pair(present_g, present_s, rng)
        if pair is None:
            cond = model.resolve_conditions(m_g, m_s, False, False, batch, n)
            logits = model.logits(tokens, cond)
            if stats:
                stats.forward_passes += 1
        else:
            cond = model.resolve_conditions(m_g, m_s, *pair.cond, batch, n)
            uncond = model.resolve_conditions(m_g, m_s, *pair.uncond, batch, n)
            logits = cfg_combine(model.logits(tokens, cond), model.logits(tokens, uncond), w)
            if stats:
                stats.forward_passes += 2
        sampled = _categorical(logits, rng, temperature)
        logp = np.take_along_axis(_log_softmax_np(logits), sampled[..., None], axis=-1)[..., 0]
        anneal = 1.0 - (i + 1) / steps
        confidence = logp + anneal * _gumbel(rng, logp.shape)
        confidence[fixed] = np.inf  # fixed positions stay fixed
        n_masked_now = n - int(fixed[0].sum())
        if i + 1 < steps:
            target = int(np.floor(mask_fraction((i + 1) / steps) * n))
            n_mask_next = max(0, min(n_masked_now - 1, target))
        else:
            n_mask_next = 0
        keep_until = n - n_mask_next
        order = np.argsort(-confidence, axis=1)
        for b in range(batch):
            keep_cols = order[b, :keep_until]
            newly = keep_cols[~fixed[b, keep_cols]]
            tokens[b, newly] = sampled[b, newly]
            fixed[b, newly] = True
    if (tokens == cfg.mask_token).any():
        raise NumericError("masked tokens survived the unmasking schedule")
    return tokens


def ar_generate(model: TokenPlanner, rng: np.random.Generator,
                m_g: np.ndarray | None = None, m_s: Tensor | None = None,
                w: float | None = None, max_n: int | None = None,
                min_n: int = 0, batch: int = 1, temperature: float = 1.0,
                stats: GenerateStats | None = None) -> list[np.ndarray]:
    """Sequential token sampling with per-token CFG; stops at END or max_n.

    ``min_n`` suppresses END until that many tokens exist (fixed-length decode).
    """
    cfg = model.cfg
    if cfg.mode != "ar":
        raise ConfigError("ar_generate requires an ar planner")
    w = cfg.guidance_scale if w is None else w
    max_n = cfg.max_tokens if max_n is None else min(max_n, cfg.max_tokens)
    present_g = m_g is not None
    present_s = m_s is not None
    tokens = np.zeros((batch, 0), dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    lengths = np.full(batch, max_n, dtype=np.int64)
    for step in range(max_n):
        pair = sample_cfg_pair(present_g, present_s, rng)
        n_ctx = tokens.shape[1]
        if m_s is not None:
            m_s_ctx = ad.take(m_s, (slice(None), slice(0, min(n_ctx + 1, m_s.shape[1]))))
        else:
            m_s_ctx = None

        def _branch(use_g: bool, use_s: bool) -> np.ndarray:
            cond = model.resolve_conditions(m_g, m_s_ctx, use_g, use_s, batch, n_ctx)
            if stats:
                stats.forward_passes += 1
            return model.logits(tokens, cond)[:, -1, :]

        if pair is None:
            logits = _branch(False, False)
        else:
            logits = cfg_combine(_branch(*pair.cond), _branch(*pair.uncond), w)
        if step < min_n:
            logits = logits.copy()
            logits[:, cfg.end_token] = -np.inf
        nxt = _categorical(logits, rng, temperature)
        newly_ended = (nxt == cfg.end_token) & ~done
        lengths[newly_ended] = step
        done |= newly_ended
        nxt = np.where(done, 0, nxt)
        tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
        if done.all():
            break
    return [tokens[b, : lengths[b]] for b in range(batch)]


# -- training ------------------------------------------------------------------


def _prepare_local_channels(item, t_max: int, rng: np.random.Generator,
                            joint_count: int) -> np.ndarray:
    """Sampled dense control channels for one training item, padded to t_max."""
    regime = ("pelvis", "random_one", "random_two", "random_three")[int(rng.integers(0, 4))]
    _, local = sample_control_spec(regime, item.motion.skeleton, item.motion,
                                   seed=int(rng.integers(0, 2**31)))
    channels = local_condition_channels(local, joint_count)
    padded, _ = pad_or_crop(channels, t_max)
    t = channels.shape[0]
    if t < t_max:
        padded = padded.copy()
        padded[t:] = 0.0  # no constraints on padded frames
    return padded


@dataclass
class PlannerTrainReport:
    steps: int = 0
    losses: list = field(default_factory=list)
    cond_drops: int = 0
    cond_draws: int = 0
    seconds: float = 0.0


class PlannerTrainer:
    """Trains a planner on tokens from a frozen tokenizer, with captions
    encoded by a frozen text encoder."""

    def __init__(self, model: TokenPlanner, tokenizer, text_encoder, dataset: Dataset,
                 seed: int = 0, batch_size: int = 32, lr: float = 2e-4,
                 lr_final: float = 2e-5, decay_fraction: float = 20.0 / 24.0,
                 use_local: bool = True, local_task_rate: float = 0.5):
        self.model = model
        self.tokenizer = tokenizer
        self.dataset = dataset
        self.rng = np.random.default_rng(seed)
        self.batch_size = batch_size
        self.lr = lr
        self.lr_final = lr_final
        self.decay_fraction = decay_fraction
        self.use_local = use_local
        # task mixing: items train as text-only or text+trajectory instantiations
        self.local_task_rate = local_task_rate if use_local else 0.0
        self.t_max = tokenizer.cfg.max_len
        items = dataset.split("train")
        stats = tokenizer.stats or dataset.normalization
        self.items = items
        self.tokens: list[np.ndarray] = []
        for it in items:
            frames = normalize(it.motion, stats).frames
            padded, _ = pad_or_crop(frames, self.t_max)
            self.tokens.append(tokenizer.tokenize_frames(padded[None])[0])
        self.n_max = max(len(t) for t in self.tokens)
        if text_encoder is not None:
            self.text_raw = np.stack([text_encoder.encode(it.caption)[0] for it in items])
        else:
            self.text_raw = None
        self.opt = nn.AdamW(model.named_params(), lr=lr)
        self._drops = 0

    def _batch(self):
        idx = self.rng.integers(0, len(self.items), size=self.batch_size)
        b = self.batch_size
        n = self.n_max
        tokens = np.zeros((b, n), dtype=np.int64)
        valid = np.zeros((b, n), dtype=bool)
        channels = np.zeros((b, self.t_max, self.model.cfg.traj_channels), dtype=np.float32)
        has_local = np.zeros(b, dtype=bool)
        text = np.zeros((b, self.model.cfg.text_dim), dtype=np.float32)
        for row, i in enumerate(idx):
            item = self.items[int(i)]
            tok = self.tokens[int(i)]
            tokens[row, : len(tok)] = tok
            valid[row, : len(tok)] = True
            if self.use_local and self.rng.random() < self.local_task_rate:
                channels[row] = _prepare_local_channels(item, self.t_max, self.rng,
                                                        self.model.cfg.joint_count)
                has_local[row] = True
            if self.text_raw is not None:
                text[row] = self.text_raw[int(i)]
        return tokens, valid, channels, has_local, text

    def _mixed_conditions(self, text: np.ndarray, channels: np.ndarray,
                          has_local: np.ndarray, b: int, n: int):
        """Per-item condition dropout to the learned null embeddings; items in
        the text-only task (no local condition) also take the null."""
        model = self.model
        cfg = model.cfg
        m_g_all = model.g_proj(Tensor(text.astype(model.dtype)))
        drop_g = np.array([sample_condition_dropout(self.rng, cfg.cond_dropout)
                           for _ in range(b)])
        drop_s = np.array([sample_condition_dropout(self.rng, cfg.cond_dropout)
                           for _ in range(b)])
        self._drops = int(drop_g.sum() + drop_s.sum())
        g_keep = Tensor((~drop_g)[:, None].astype(model.dtype))
        null_g = ad.reshape(model.null_global, (1, cfg.d_model))
        m_g = ad.add(ad.mul(m_g_all, g_keep), ad.mul(null_g, ad.add(ad.mul(g_keep, -1.0), 1.0)))
        length = model.local_len(n)
        if self.use_local and has_local.any():
            m_s_all = model.encode_trajectory(channels, self.rng)
            if m_s_all.shape[1] > length:
                m_s_all = ad.take(m_s_all, (slice(None), slice(0, length)))
            s_keep = Tensor((~drop_s & has_local)[:, None, None].astype(model.dtype))
            nulls = model.null_local_features(b, m_s_all.shape[1])
            m_s = ad.add(ad.mul(m_s_all, s_keep),
                         ad.mul(nulls, ad.add(ad.mul(s_keep, -1.0), 1.0)))
        else:
            m_s = model.null_local_features(b, length if cfg.mode == "ar" else n)
        return m_g, m_s

    def train_step(self, tokens, valid, channels, has_local, text) -> float:
        model = self.model
        cfg = model.cfg
        rng = self.rng
        b, n = tokens.shape
        m_g, m_s = self._mixed_conditions(text, channels, has_local, b, n)
        cond = ConditionEmbeddings(m_g=m_g, m_s=m_s, present_g=True, present_s=True)
        if cfg.mode == "ddm":
            u = rng.random(b)
            frac = np.cos(np.pi * u / 2.0)
            input_tokens = tokens.copy()
            loss_mask = np.zeros((b, n), dtype=bool)
            for row in range(b):
                pos = np.flatnonzero(valid[row])
                k = max(1, int(np.ceil(frac[row] * len(pos))))
                masked = rng.choice(pos, size=min(k, len(pos)), replace=False)
                loss_mask[row, masked] = True
            input_tokens[loss_mask] = cfg.mask_token
            input_tokens = corrupt_tokens(input_tokens, cfg.token_replace,
                                          cfg.codebook_size, rng, valid & ~loss_mask)
            logits = model.forward(model.build_planner_input(input_tokens, cond, valid))
            weights = loss_mask.reshape(-1).astype(np.float64)
            loss = ad.cross_entropy(ad.reshape(logits, (b * n, cfg.vocab_out)),
                                    tokens.reshape(-1), weights)
        else:
            input_tokens = corrupt_tokens(tokens, cfg.token_replace, cfg.codebook_size,
                                          rng, valid)
            logits = model.forward(model.build_planner_input(input_tokens, cond, valid))
            targets = np.zeros((b, n + 1), dtype=np.int64)
            weights = np.zeros((b, n + 1), dtype=np.float64)
            for row in range(b):
                ln = int(valid[row].sum())
                targets[row, :ln] = tokens[row, :ln]
                targets[row, ln] = cfg.end_token
                weights[row, : ln + 1] = 1.0
            loss = ad.cross_entropy(ad.reshape(logits, (b * (n + 1), cfg.vocab_out)),
                                    targets.reshape(-1), weights.reshape(-1))
        if not np.isfinite(loss.data):
            raise NumericError("non-finite planner loss")
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return float(loss.data)

    def run(self, steps: int, log_every: int = 0) -> PlannerTrainReport:
        report = PlannerTrainReport()
        start = time.time()
        decay_at = int(self.decay_fraction * steps)
        self.model.set_training(True)
        for step in range(steps):
            self.opt.lr = self.lr if step < decay_at else self.lr_final
            loss = self.train_step(*self._batch())
            report.losses.append(loss)
            report.cond_drops += self._drops
            report.cond_draws += 2 * self.batch_size
            if log_every and (step + 1) % log_every == 0:
                print(f"  planner step {step + 1}/{steps} loss={loss:.4f}", flush=True)
        self.model.set_training(False)
        report.steps = steps
        report.seconds = time.time() - start
        return report
