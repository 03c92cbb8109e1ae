"""Noise schedule, forward corruption, and the spaced reverse-step posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray  # cumulative signal coefficients, decreasing in t

    @staticmethod
    def linear(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
        alpha_bars = np.cumprod(1.0 - betas)
        return NoiseSchedule(betas, alpha_bars)

    @property
    def steps(self) -> int:
        return len(self.betas)


def forward_diffuse(x0: np.ndarray, t: np.ndarray | int, noise: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.steps):
        raise ConfigError(f"timestep out of range [0, {schedule.steps})")
    if noise.shape != x0.shape:
        raise ConfigError("noise must match x0 shape")
    ab = schedule.alpha_bars[t]
    while ab.ndim < x0.ndim:
        ab = ab[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


@dataclass(frozen=True)
class SpacedSchedule:
    """Respaced subsequence of a base schedule for few-step sampling."""

    timesteps: np.ndarray  # increasing original timestep indices
    alpha_bars: np.ndarray  # base alpha_bars at those timesteps

    @staticmethod
    def from_base(schedule: NoiseSchedule, count: int) -> "SpacedSchedule":
        """Quadratic placement: dense near t=0 where fine texture is decided,
        coarse near t=T. Exactly ``count`` distinct timesteps."""
        if count < 1 or count > schedule.steps:
            raise ConfigError("spaced step count out of range")
        if count == schedule.steps:
            ts = np.arange(schedule.steps, dtype=np.int64)
        else:
            grid = np.linspace(0.0, 1.0, count) ** 2
            ts = np.round(grid * (schedule.steps - 1)).astype(np.int64)
            while len(np.unique(ts)) < count:  # resolve rounding collisions
                uniq, counts = np.unique(ts, return_counts=True)
                missing = sorted(set(range(schedule.steps)) - set(uniq))
                dupes = uniq[counts > 1]
                for d in dupes[: len(missing)]:
                    idx = int(np.where(ts == d)[0][-1])
                    ts[idx] = missing.pop(0)
                ts = np.sort(ts)
            ts = np.sort(ts)
        return SpacedSchedule(ts, schedule.alpha_bars[ts])

    @property
    def steps(self) -> int:
        return len(self.timesteps)

    def posterior(self, x0_hat: np.ndarray, x_t: np.ndarray, i: int):
        """Mean/variance of p(x_{i-1} | x_i, x0_hat) on the respaced chain.

        At i == 0 the mean collapses to x0_hat and the variance to 0.
        """
        ab_t = self.alpha_bars[i]
        ab_prev = self.alpha_bars[i - 1] if i > 0 else 1.0
        alpha = ab_t / ab_prev
        beta = 1.0 - alpha
        denom = 1.0 - ab_t
        coef_x0 = np.sqrt(ab_prev) * beta / denom
        coef_xt = np.sqrt(alpha) * (1.0 - ab_prev) / denom
        mean = coef_x0 * x0_hat + coef_xt * x_t
        var = beta * (1.0 - ab_prev) / denom
        return mean, var
