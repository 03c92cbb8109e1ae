"""End-to-end generation: perception (condition encoding), planning (token
generation), and control (guided diffusion decoding). Shared by CLI and
service so both produce identical artifacts for identical requests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .control import ControlGuidance, RefineCounter, make_refine_fn
from .data import LocalCondition, MotionSequence, denormalize, normalize
from .errors import ConfigError, SchemaError
from .planner import (TokenPlanner, ar_generate, ddm_generate, GenerateStats,
                      local_condition_channels)
from .tokenizer import MotionTokenizer, pad_to_multiple, token_count


@dataclass
class ControlRequest:
    targets: np.ndarray  # (T, J, 3) meters
    mask: np.ndarray  # (T, J) bool
    eta: float = 0.08
    inner_steps: int = 1

    def local_condition(self) -> LocalCondition:
        return LocalCondition(targets=self.targets, mask=self.mask)


@dataclass
class GenerationRequest:
    prompt: str = ""
    length: int = 64
    planner: str = "ddm"
    guidance_scale: float | None = None
    seed: int = 0
    control: ControlRequest | None = None
    planner_local_cond: bool = True
    decoder_guidance: bool = True
    temperature: float = 1.0
    sampler: str = "spaced_27"


@dataclass
class GenerationResult:
    motion: MotionSequence  # denormalized, meters
    tokens: np.ndarray
    keyframe_errors: list[dict] = field(default_factory=list)
    avg_err: float | None = None
    timings: dict[str, float] = field(default_factory=dict)
    refine_calls: int = 0
    planner_forward_passes: int = 0
    local_cond_in_planner: bool = False


class ModelBundle:
    """Loaded models behind the generation endpoints; read-only per request."""

    def __init__(self, tokenizer: MotionTokenizer, planners: dict[str, TokenPlanner],
                 text_encoder, evaluator=None):
        if tokenizer.stats is None or tokenizer.skeleton is None:
            raise ConfigError("tokenizer checkpoint lacks normalization stats or skeleton")
        self.tokenizer = tokenizer
        self.planners = planners
        self.text_encoder = text_encoder
        self.evaluator = evaluator

    @property
    def default_planner(self) -> str:
        return "ddm" if "ddm" in self.planners else next(iter(self.planners))

    @staticmethod
    def load(model_dir: str | Path) -> "ModelBundle":
        model_dir = Path(model_dir)
        tok_path = model_dir / "tokenizer.ckpt"
        if not tok_path.exists():
            raise ConfigError(f"missing checkpoint {tok_path}")
        tokenizer = ckpt.load_tokenizer(tok_path)
        planners = {}
        for mode in ("ddm", "ar"):
            p = model_dir / f"planner_{mode}.ckpt"
            if p.exists():
                planners[mode] = ckpt.load_planner(p, expect_mode=mode)
        if not planners:
            raise ConfigError(f"no planner checkpoints under {model_dir}")
        external = model_dir / "external_embeddings.bin"
        text_path = model_dir / "text_encoder.ckpt"
        if external.exists():
            from .text import FileTextEncoder

            text_encoder = FileTextEncoder(external)
        elif text_path.exists():
            text_encoder = ckpt.load_embedder(text_path, "text_encoder").text
        else:
            text_encoder = None
        eval_path = model_dir / "evaluator.ckpt"
        evaluator = ckpt.load_embedder(eval_path) if eval_path.exists() else None
        return ModelBundle(tokenizer, planners, text_encoder, evaluator)

    def save(self, model_dir: str | Path) -> None:
        model_dir = Path(model_dir)
        model_dir.mkdir(parents=True, exist_ok=True)
        ckpt.save_tokenizer(model_dir / "tokenizer.ckpt", self.tokenizer)
        for mode, planner in self.planners.items():
            ckpt.save_planner(model_dir / f"planner_{mode}.ckpt", planner)

    def describe(self) -> dict:
        tok = self.tokenizer
        return {
            "planner": self.default_planner,
            "planners": sorted(self.planners),
            "downrate": tok.cfg.downrate,
            "K": tok.cfg.codebook_size,
            "max_length": tok.cfg.max_len,
            "feature_dim": tok.cfg.feature_dim,
            "fps": tok.fps,
            "joint_names": list(tok.skeleton.joint_names),
            "foot_joints": list(tok.skeleton.foot_joint_indices),
            "decoder_variant": tok.cfg.decoder_variant,
            "guidance_defaults": {m: p.cfg.guidance_scale for m, p in self.planners.items()},
        }


def _planner_local_features(planner: TokenPlanner, local: LocalCondition,
                            downrate: int, n: int, max_len: int):
    channels = local_condition_channels(local, planner.cfg.joint_count)
    t = channels.shape[0]
    if t % downrate:
        pad = np.zeros((downrate - t % downrate, channels.shape[1]), dtype=channels.dtype)
        channels = np.concatenate([channels, pad], axis=0)
    m_s = planner.encode_trajectory(channels[None])
    if m_s.shape[1] < n:
        raise SchemaError(f"local condition covers {m_s.shape[1]} tokens, need {n}")
    from . import autodiff as ad

    if m_s.shape[1] > n:
        m_s = ad.take(m_s, (slice(None), slice(0, n)))
    return m_s


def generate(bundle: ModelBundle, request: GenerationRequest) -> GenerationResult:
    tok = bundle.tokenizer
    if request.planner not in bundle.planners:
        raise ConfigError(f"planner {request.planner!r} not loaded")
    planner = bundle.planners[request.planner]
    if request.length < tok.cfg.downrate:
        raise ConfigError(f"length must be >= downrate {tok.cfg.downrate}")
    if request.length > tok.cfg.max_len:
        raise ConfigError(f"length {request.length} exceeds max length {tok.cfg.max_len}")
    rng = np.random.default_rng(request.seed)
    n = token_count(request.length, tok.cfg.downrate)

    m_g = None
    if request.prompt.strip():
        if bundle.text_encoder is None:
            raise ConfigError("no text encoder loaded; cannot encode prompt")
        raw, present = bundle.text_encoder.encode(request.prompt)
        if present:
            m_g = planner.embed_global(raw)

    local = request.control.local_condition() if request.control else None
    m_s = None
    used_local_in_planner = False
    if local is not None and request.planner_local_cond and local.mask.any():
        m_s = _planner_local_features(planner, local, tok.cfg.downrate, n, tok.cfg.max_len)
        used_local_in_planner = True

    stats = GenerateStats()
    t0 = time.perf_counter()
    w = request.guidance_scale
    if planner.cfg.mode == "ddm":
        tokens = ddm_generate(planner, n, rng, m_g=m_g, m_s=m_s, w=w,
                              batch=1, temperature=request.temperature, stats=stats)[0]
    else:
        tokens = ar_generate(planner, rng, m_g=m_g, m_s=m_s, w=w, max_n=n,
                             min_n=n, batch=1, temperature=request.temperature,
                             stats=stats)[0]
    planner_ms = (time.perf_counter() - t0) * 1000.0

    counter = RefineCounter()
    refine_ms_box = [0.0]
    refine_fn = None
    if (local is not None and request.decoder_guidance and local.mask.any()
            and request.control.eta > 0 and tok.cfg.decoder_variant != "conv"):
        guidance = ControlGuidance(local=local, eta=request.control.eta,
                                   inner_steps=request.control.inner_steps)
        steps = 27 if request.sampler == "spaced_27" else tok.schedule.steps
        inner = make_refine_fn(tok.skeleton, guidance, tok.stats, steps, counter)

        def refine_fn(x):  # noqa: F811 - timed wrapper
            t1 = time.perf_counter()
            out = inner(x)
            refine_ms_box[0] += (time.perf_counter() - t1) * 1000.0
            return out

    t0 = time.perf_counter()
    frames_norm = tok.decode_tokens(tokens[None], request.length, rng,
                                    request.sampler, refine_fn=refine_fn)[0]
    decode_ms = (time.perf_counter() - t0) * 1000.0 - refine_ms_box[0]

    motion = denormalize(MotionSequence(frames_norm, tok.fps, tok.skeleton), tok.stats)
    errors: list[dict] = []
    avg = None
    if local is not None and local.mask.any():
        positions = motion.joint_positions()
        rows, joints = np.nonzero(local.mask)
        dists = []
        for f, j in zip(rows, joints):
            c = positions.shape[2]
            e = float(np.linalg.norm(positions[f, j] - local.targets[f, j, :c]))
            errors.append({"frame": int(f), "joint": int(j), "error": e})
            dists.append(e)
        avg = float(np.mean(dists))
    return GenerationResult(
        motion=motion, tokens=tokens, keyframe_errors=errors, avg_err=avg,
        timings={"planner_ms": planner_ms, "decode_ms": decode_ms,
                 "refine_ms": refine_ms_box[0]},
        refine_calls=counter.calls,
        planner_forward_passes=stats.forward_passes,
        local_cond_in_planner=used_local_in_planner,
    )


def control_decode(bundle: ModelBundle, tokens: np.ndarray, length: int,
                   control: ControlRequest | None, seed: int,
                   sampler: str = "spaced_27") -> GenerationResult:
    """Re-decode existing tokens under new control; no planning involved."""
    tok = bundle.tokenizer
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise SchemaError("tokens must be a flat index list")
    if (tokens < 0).any() or (tokens >= tok.cfg.codebook_size).any():
        raise SchemaError("token index out of codebook range")
    rng = np.random.default_rng(seed)
    counter = RefineCounter()
    refine_ms_box = [0.0]
    refine_fn = None
    local = control.local_condition() if control else None
    if (local is not None and local.mask.any() and control.eta > 0
            and tok.cfg.decoder_variant != "conv"):
        guidance = ControlGuidance(local=local, eta=control.eta,
                                   inner_steps=control.inner_steps)
        steps = 27 if sampler == "spaced_27" else tok.schedule.steps
        inner = make_refine_fn(tok.skeleton, guidance, tok.stats, steps, counter)

        def refine_fn(x):  # noqa: F811
            t1 = time.perf_counter()
            out = inner(x)
            refine_ms_box[0] += (time.perf_counter() - t1) * 1000.0
            return out

    t0 = time.perf_counter()
    frames_norm = tok.decode_tokens(tokens[None], length, rng, sampler,
                                    refine_fn=refine_fn)[0]
    decode_ms = (time.perf_counter() - t0) * 1000.0 - refine_ms_box[0]
    motion = denormalize(MotionSequence(frames_norm, tok.fps, tok.skeleton), tok.stats)
    errors: list[dict] = []
    avg = None
    if local is not None and local.mask.any():
        positions = motion.joint_positions()
        rows, joints = np.nonzero(local.mask)
        dists = []
        for f, j in zip(rows, joints):
            c = positions.shape[2]
            e = float(np.linalg.norm(positions[f, j] - local.targets[f, j, :c]))
            errors.append({"frame": int(f), "joint": int(j), "error": e})
            dists.append(e)
        avg = float(np.mean(dists))
    return GenerationResult(
        motion=motion, tokens=tokens, keyframe_errors=errors, avg_err=avg,
        timings={"planner_ms": 0.0, "decode_ms": decode_ms, "refine_ms": refine_ms_box[0]},
        refine_calls=counter.calls,
    )


def tokenize_motion(bundle: ModelBundle, frames_meters: np.ndarray) -> np.ndarray:
    """Raw (T, D) frames in meters -> token indices."""
    tok = bundle.tokenizer
    motion = MotionSequence(frames_meters.astype(np.float32), tok.fps, tok.skeleton)
    return tok.tokenize(normalize(motion, tok.stats)).indices


def reconstruct_motion(bundle: ModelBundle, frames_meters: np.ndarray, seed: int,
                       sampler: str = "spaced_27"):
    tok = bundle.tokenizer
    tokens = tokenize_motion(bundle, frames_meters)
    rng = np.random.default_rng(seed)
    frames_norm = tok.decode_tokens(tokens[None], frames_meters.shape[0], rng, sampler)[0]
    motion = denormalize(MotionSequence(frames_norm, tok.fps, tok.skeleton), tok.stats)
    return motion, tokens
