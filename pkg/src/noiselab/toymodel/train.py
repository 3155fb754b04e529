"""Denoiser training: noisy grids in, L1 noise-prediction loss out.

Style conditioning is dropped to the null token on a fraction of samples
each batch so one network serves both guided branches at sampling time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import gradkit as gk
from ..diffcore import NoiseSchedule, forward_diffuse
from ..ditto.adam import AdamState, adam_update
from .denoiser import Denoiser
from .synth import SyntheticClip

__all__ = ["TrainConfig", "TrainingDiverged", "train_denoiser"]


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    cfg_dropout: float = 0.1
    seed: int = 0
    log_every: int = 0  # epochs between progress prints; 0 = silent


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


def train_denoiser(model: Denoiser, clips: list[SyntheticClip],
                   schedule: NoiseSchedule, config: TrainConfig = TrainConfig()
                   ) -> list[float]:
    """Optimize in place; returns mean L1 loss per epoch."""
    if len(clips) < config.batch_size:
        raise ValueError("dataset smaller than one batch")
    rng = np.random.default_rng(config.seed)
    dtype = model.dtype
    data = np.stack([c.values for c in clips]).astype(dtype)[:, None]
    styles = np.array([c.style for c in clips], dtype=np.int64)
    n, T = len(clips), schedule.n_train_steps
    model.set_trainable(True)
    opt: dict[str, AdamState] = {name: AdamState.like(p.values)
                                 for name, p in model.params.items()}
    history: list[float] = []
    n_batches = n // config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for b in range(n_batches):
            pick = order[b * config.batch_size:(b + 1) * config.batch_size]
            x0 = data[pick]
            t = rng.integers(1, T + 1, size=pick.size)
            noise = rng.standard_normal(x0.shape).astype(dtype)
            x_t = forward_diffuse(x0, t, noise, schedule)
            ids = styles[pick].copy()
            ids[rng.random(pick.size) < config.cfg_dropout] = model.null_style
            model.zero_grads()
            with gk.Tape():
                pred = model(x_t, t, ids)
                err = gk.add(pred, gk.constant(-noise))
                loss = gk.reduce_mean(gk.nonlinearity(err, "abs"))
            loss_val = float(loss.values)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"loss became non-finite in epoch {epoch}", history)
            gk.backward(loss)
            for name, p in model.params.items():
                if p.grad is not None:
                    p.values = adam_update(opt[name], p.values, p.grad, config.lr)
            epoch_losses.append(loss_val)
        history.append(float(np.mean(epoch_losses)))
        if config.log_every and (epoch + 1) % config.log_every == 0:
            print(f"epoch {epoch + 1:3d}/{config.epochs}  L1 {history[-1]:.4f}")
    model.zero_grads()
    return history
