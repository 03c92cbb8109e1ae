"""Decode-time kinematic control: quadratic control loss, the explicit
gradient refinement step, and guided diffusion decoding."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import LocalCondition, MotionSequence, NormalizationStats, SkeletonDescriptor
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlGuidance:
    local: LocalCondition
    eta: float
    inner_steps: int = 1
    schedule: np.ndarray | None = None  # per-reverse-step eta multipliers

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ConfigError("eta must be finite and >= 0")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps must be >= 1")

    def step_eta(self, k: int, total: int) -> float:
        if self.schedule is None:
            return self.eta
        idx = min(k, len(self.schedule) - 1)
        return float(self.eta * self.schedule[idx])


def linear_ramp(total_steps: int, start: float = 0.5, end: float = 1.0) -> np.ndarray:
    """Optional per-step multiplier ramp from start to end over the sweep."""
    return np.linspace(start, end, total_steps)


def _positions_from_frames(frames: np.ndarray, skeleton: SkeletonDescriptor):
    """(..., T, D) frames -> list of per-joint (..., T, C) position views."""
    return [frames[..., start:stop] for start, stop in skeleton.position_slices]


def control_loss_frames(frames: np.ndarray, skeleton: SkeletonDescriptor,
                        local: LocalCondition) -> float:
    """Mean squared Euclidean deviation over constrained (frame, joint) pairs.

    ``frames`` are (T, D) in meters.
    """
    if not local.mask.any():
        log.warning("control loss requested with an empty mask; defined as 0")
        return 0.0
    total = 0.0
    count = 0
    for j, (start, stop) in enumerate(skeleton.position_slices):
        rows = np.flatnonzero(local.mask[:, j])
        if rows.size == 0:
            continue
        c = stop - start
        diff = frames[rows, start:stop] - local.targets[rows, j, :c]
        total += float((diff**2).sum())
        count += rows.size
    return total / max(count, 1)


def control_loss(motion: MotionSequence, local: LocalCondition) -> float:
    return control_loss_frames(motion.frames, motion.skeleton, local)


def control_loss_grad(frames: np.ndarray, skeleton: SkeletonDescriptor,
                      local: LocalCondition):
    """Analytic gradient of the quadratic loss w.r.t. (T, D) frames in meters.

    Returns (loss, grad); grad is exactly zero outside position slices and
    outside the mask.
    """
    grad = np.zeros_like(frames)
    if not local.mask.any():
        return 0.0, grad
    total = 0.0
    count = int(local.mask.sum())
    for j, (start, stop) in enumerate(skeleton.position_slices):
        rows = np.flatnonzero(local.mask[:, j])
        if rows.size == 0:
            continue
        c = stop - start
        diff = frames[rows, start:stop] - local.targets[rows, j, :c]
        total += float((diff**2).sum())
        grad[rows, start:stop] = 2.0 * diff / count
    return total / count, grad


def gradient_lipschitz(skeleton: SkeletonDescriptor, local: LocalCondition,
                       stats: NormalizationStats | None = None) -> float:
    """Lipschitz constant of the control-loss gradient w.r.t. the frame array
    (normalized frames when stats given): max_c 2 std_c^2 / count."""
    count = max(int(local.mask.sum()), 1)
    scale = 1.0
    if stats is not None:
        cols = []
        for start, stop in skeleton.position_slices:
            cols.extend(range(start, stop))
        scale = float((stats.std[cols] ** 2).max())
    return 2.0 * scale / count


def suggested_eta(skeleton: SkeletonDescriptor, local: LocalCondition,
                  stats: NormalizationStats | None = None,
                  fraction: float = 0.7) -> float:
    """Step size as a fraction of 1/L for this constraint set.

    The control loss averages over masked pairs, so its gradient (and the
    useful eta range) scales with the constraint count; picking eta relative
    to the Lipschitz constant keeps refinement strong for dense control and
    stable for sparse control.
    """
    return fraction / gradient_lipschitz(skeleton, local, stats)


def refine_step(motion: MotionSequence, local: LocalCondition, eta: float) -> MotionSequence:
    """One explicit gradient-descent step on the control loss (meters space)."""
    if eta == 0.0:
        return motion
    loss, grad = control_loss_grad(motion.frames.astype(np.float64), motion.skeleton, local)
    if not np.isfinite(grad).all():
        log.warning("non-finite control gradient; refinement skipped")
        return motion
    frames = motion.frames - (eta * grad).astype(motion.frames.dtype)
    return MotionSequence(frames, motion.fps, motion.skeleton)


def refine_frames_normalized(frames_norm: np.ndarray, skeleton: SkeletonDescriptor,
                             local: LocalCondition, eta: float,
                             stats: NormalizationStats) -> np.ndarray:
    """Refinement applied to normalized frames: the loss lives in meters and the
    gradient is propagated through the per-dimension normalization scale."""
    if eta == 0.0:
        return frames_norm
    meters = frames_norm.astype(np.float64) * stats.std + stats.mean
    _, grad_m = control_loss_grad(meters, skeleton, local)
    grad_norm = grad_m * stats.std
    if not np.isfinite(grad_norm).all():
        log.warning("non-finite control gradient; refinement skipped")
        return frames_norm
    return (frames_norm - (eta * grad_norm).astype(frames_norm.dtype)).astype(frames_norm.dtype)


@dataclass
class RefineCounter:
    calls: int = 0


def make_refine_fn(skeleton: SkeletonDescriptor, guidance: ControlGuidance,
                   stats: NormalizationStats, total_steps: int,
                   counter: RefineCounter | None = None):
    """Refinement hook for the diffusion sampler over (B, T, D) normalized
    batches; tracks the reverse-step index to apply the eta schedule."""
    state = {"k": 0}

    def refine(x0_hat: np.ndarray) -> np.ndarray:
        eta_k = guidance.step_eta(state["k"], total_steps)
        state["k"] += 1
        if eta_k == 0.0:
            return x0_hat
        out = x0_hat.copy()
        for b in range(out.shape[0]):
            x = out[b]
            for _ in range(guidance.inner_steps):
                x = refine_frames_normalized(x, skeleton, guidance.local, eta_k, stats)
            out[b] = x
            if counter is not None:
                counter.calls += guidance.inner_steps
        return out

    return refine


def guided_decode(tokens, local: LocalCondition, tokenizer, guidance: ControlGuidance,
                  rng: np.random.Generator, target_t: int | None = None,
                  sampler: str = "spaced_27", counter: RefineCounter | None = None) -> MotionSequence:
    """Decode tokens with refine_step applied to each clean-motion prediction;
    returns a denormalized MotionSequence."""
    from .data import TokenSequence, denormalize  # local import avoids cycles

    if isinstance(tokens, TokenSequence):
        idx = tokens.indices[None]
        t = tokens.source_length if target_t is None else target_t
    else:
        idx = np.asarray(tokens)
        if idx.ndim == 1:
            idx = idx[None]
        if target_t is None:
            raise ConfigError("target_t required for raw token arrays")
        t = target_t
    stats = tokenizer.stats
    skeleton = _skeleton_or_fail(tokenizer)
    steps = 27 if sampler == "spaced_27" else tokenizer.schedule.steps
    refine = None
    if guidance.local.mask.any() and guidance.eta > 0:
        refine = make_refine_fn(skeleton, guidance, stats, steps, counter)
    frames_norm = tokenizer.decode_tokens(idx, t, rng, sampler, refine_fn=refine)[0]
    motion = MotionSequence(frames_norm, tokenizer.fps, skeleton)
    return denormalize(motion, stats)


def _skeleton_or_fail(tokenizer) -> SkeletonDescriptor:
    skeleton = getattr(tokenizer, "skeleton", None)
    if skeleton is None:
        raise ConfigError("tokenizer has no skeleton descriptor attached")
    return skeleton
