"""Noise schedules and the forward corruption process.

The training-time schedule is the squared-cosine profile with a small
offset, discretized to per-step betas and re-accumulated, so the stored
``alpha_bar`` is exactly the cumulative product of the stored alphas.
Index 0 is the clean level: ``alpha_bar[0] == 1`` by construction, which
lets every sampler treat "step to level 0" like any other step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSchedule", "build_cosine_schedule", "forward_diffuse",
           "uniform_steps"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete noise levels t = 0..n_train_steps (0 is clean)."""

    n_train_steps: int
    beta: np.ndarray        # [T+1], beta[0] = 0
    alpha: np.ndarray       # [T+1], alpha[0] = 1, alpha[t] = 1 - beta[t]
    alpha_bar: np.ndarray   # [T+1], alpha_bar[0] = 1, cumulative product

    def __post_init__(self):
        T = self.n_train_steps
        if T < 1:
            raise ValueError("schedule needs at least one step")
        for name in ("beta", "alpha", "alpha_bar"):
            arr = getattr(self, name)
            if arr.shape != (T + 1,):
                raise ValueError(f"{name} must have shape ({T + 1},), got {arr.shape}")
        if self.beta[0] != 0.0 or self.alpha[0] != 1.0 or self.alpha_bar[0] != 1.0:
            raise ValueError("index 0 must be the clean level")
        if np.any(self.beta[1:] <= 0.0) or np.any(self.beta[1:] >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if not np.allclose(self.alpha, 1.0 - self.beta):
            raise ValueError("alpha must equal 1 - beta")
        if not np.allclose(self.alpha_bar, np.cumprod(self.alpha), rtol=1e-12):
            raise ValueError("alpha_bar must be the cumulative product of alpha")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must decrease strictly")

    # -- serialization (sidecar for checkpoints and run records) --------
    def to_dict(self) -> dict:
        return {
            "n_train_steps": self.n_train_steps,
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        beta = np.asarray(d["beta"], dtype=np.float64)
        alpha = 1.0 - beta
        return cls(n_train_steps=int(d["n_train_steps"]), beta=beta,
                   alpha=alpha, alpha_bar=np.cumprod(alpha))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "NoiseSchedule":
        return cls.from_dict(json.loads(s))


def build_cosine_schedule(n_steps: int = 1000, offset: float = 0.008,
                          max_beta: float = 0.999,
                          min_beta: float = 1e-6) -> NoiseSchedule:
    """Squared-cosine noise profile, discretized with clipped betas.

    The profile value at step t is cos^2(((t/T + offset)/(1 + offset)) * pi/2),
    normalized by its value at t = 0.  Betas derived from consecutive ratios
    are clipped into [min_beta, max_beta] and alpha_bar is recomputed from
    the clipped betas so the stored arrays stay mutually consistent.
    """
    T = int(n_steps)
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + offset) / (1.0 + offset)) * (np.pi / 2.0)) ** 2
    profile = f / f[0]
    raw_beta = 1.0 - profile[1:] / profile[:-1]
    beta = np.concatenate([[0.0], np.clip(raw_beta, min_beta, max_beta)])
    alpha = 1.0 - beta
    return NoiseSchedule(n_train_steps=T, beta=beta, alpha=alpha,
                         alpha_bar=np.cumprod(alpha))


def forward_diffuse(x0: np.ndarray, t: int | np.ndarray, noise: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Corrupt clean data to level t: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise.

    ``t`` may be a per-sample integer array for batched training; it is
    then broadcast against leading batch axes.
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != data shape {x0.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.n_train_steps):
        raise ValueError(f"t out of range 0..{schedule.n_train_steps}")
    ab = schedule.alpha_bar[t_arr].astype(x0.dtype)
    if t_arr.ndim > 0:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def uniform_steps(n_train_steps: int, n_steps: int) -> np.ndarray:
    """Descending noise levels, evenly spread, from n_train_steps down to 1."""
    if not 1 <= n_steps <= n_train_steps:
        raise ValueError(f"cannot place {n_steps} steps in 1..{n_train_steps}")
    steps = np.unique(np.round(np.linspace(1, n_train_steps, n_steps)).astype(np.int64))
    if steps.size != n_steps:
        raise ValueError("step grid collapsed; reduce n_steps")
    return steps[::-1].copy()
