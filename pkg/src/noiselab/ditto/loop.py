"""Initial-noise optimization through a frozen sampler.

The only free variable is the starting noise of a deterministic reverse
process.  Each iteration decodes the current noise with per-step gradient
checkpointing, scores the decoded clip with feature losses, backpropagates
to the noise, and applies one Adam update.  Model weights never move.

Batched runs stay exactly equivalent to independent single runs: losses
are summed (not averaged) over the batch, so each sample's gradient block
is untouched by the others, and Adam is elementwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import gradkit as gk
from ..diffcore import NoiseSchedule, SamplerSpec, sample
from ..features import ControlTask, batched_multi_loss
from .adam import AdamState, adam_update

__all__ = ["DittoConfig", "OptRunRecord", "OptimizerDiverged", "ditto_optimize"]


class OptimizerDiverged(RuntimeError):
    """Loss became non-finite; carries the record accumulated so far."""

    def __init__(self, message: str, record: "OptRunRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass
class DittoConfig:
    """Optimization knobs for the noise-space loop."""

    k_max: int = 70             # Adam updates budget
    lr: float = 5e-3
    tau: float | None = None    # early-stop loss threshold, per sample
    grad_clip: float | None = None  # max L2 norm of each sample's gradient

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")


@dataclass
class OptRunRecord:
    """Everything a study needs to replay or score one optimization run."""

    losses: np.ndarray            # [n_evals, B] per-sample loss trace
    x_best: np.ndarray            # [B, 1, F, N] decoded clips at best eval
    noise_best: np.ndarray        # [B, 1, F, N] noise that decodes to x_best
    best_step: np.ndarray         # [B] eval index of the best loss
    first_hit: np.ndarray         # [B] first eval at/below tau, -1 if never
    steps: int                    # Adam updates actually applied
    converged: np.ndarray         # [B] bool, loss reached tau
    tau: float | None
    model_calls: int
    peak_bytes: int
    step_wall_times: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return int(self.losses.shape[1])

    @property
    def final_losses(self) -> np.ndarray:
        return self.losses[-1]

    @property
    def best_losses(self) -> np.ndarray:
        return self.losses[self.best_step, np.arange(self.batch)]


def _clip_grads(grad: np.ndarray, max_norm: float) -> np.ndarray:
    flat = grad.reshape(grad.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    scale = np.minimum(1.0, max_norm / np.maximum(norms, 1e-30))
    return (flat * scale).reshape(grad.shape)


def ditto_optimize(model, schedule: NoiseSchedule, spec: SamplerSpec,
                   tasks: Sequence[ControlTask] | ControlTask,
                   x_init: np.ndarray, cond=None,
                   config: DittoConfig = DittoConfig(),
                   meter: gk.CostMeter | None = None) -> OptRunRecord:
    """Optimize initial noise so the decoded clip minimizes the task losses.

    ``x_init`` is [B, 1, F, N]; every sample optimizes independently under
    the same tasks and conditioning.  Returns the per-sample best decode
    (``x_best``), which always corresponds to ``noise_best`` under ``spec``
    because the sampler is deterministic.
    """
    if not spec.deterministic:
        raise ValueError("noise optimization needs a deterministic sampler "
                         f"(got kind='{spec.kind}', sigma_rule='{spec.sigma_rule}')")
    if isinstance(tasks, ControlTask):
        tasks = [tasks]
    if len(tasks) == 0:
        raise ValueError("need at least one control task")
    x_init = np.asarray(x_init)
    if x_init.ndim != 4 or x_init.shape[1] != 1:
        raise ValueError(f"x_init must be [B, 1, F, N], got {x_init.shape}")
    batch = x_init.shape[0]

    active = gk.active_meter()
    if active is not None and meter is not None and meter is not active:
        raise gk.MeterError("a different meter scope is already active")
    meter = meter or active or gk.CostMeter()
    scope = gk.meter_scope(meter) if active is None else None
    calls0 = meter.model_calls
    times0 = len(meter.step_wall_times)

    x = gk.tensor(x_init.copy(), requires_grad=True)
    opt = AdamState.like(x.values)

    trace: list[np.ndarray] = []
    best_loss = np.full(batch, np.inf)
    best_step = np.zeros(batch, dtype=np.int64)
    first_hit = np.full(batch, -1, dtype=np.int64)
    x_best = np.array(x_init, copy=True)
    noise_best = np.array(x_init, copy=True)
    steps_done = 0

    def _freeze() -> OptRunRecord:
        losses = np.stack(trace) if trace else np.empty((0, batch))
        return OptRunRecord(
            losses=losses, x_best=x_best, noise_best=noise_best,
            best_step=best_step, first_hit=first_hit, steps=steps_done,
            converged=first_hit >= 0, tau=config.tau,
            model_calls=meter.model_calls - calls0,
            peak_bytes=meter.peak_bytes,
            step_wall_times=list(meter.step_wall_times[times0:]),
            meta={"k_max": config.k_max, "lr": config.lr,
                  "sampler": spec.kind, "cfg_scale": spec.cfg_scale,
                  "n_steps": int(len(spec.steps)), "batch": batch})

    try:
        if scope is not None:
            scope.__enter__()
        for k in range(config.k_max):
            tic = time.perf_counter()
            tape = gk.Tape()
            with tape:
                x0 = sample(model, x, cond, spec, schedule, checkpointed=True)
                total, per_sample = batched_multi_loss(x0, tasks)
            if not np.all(np.isfinite(per_sample)):
                tape.release()
                raise OptimizerDiverged(
                    f"loss became non-finite at step {k}", _freeze())
            trace.append(per_sample)

            improved = per_sample < best_loss
            if np.any(improved):
                best_loss = np.where(improved, per_sample, best_loss)
                best_step[improved] = k
                x_best[improved] = x0.values[improved]
                noise_best[improved] = x.values[improved]
            if config.tau is not None:
                newly = (first_hit < 0) & (per_sample <= config.tau)
                first_hit[newly] = k
                if np.all(first_hit >= 0):
                    tape.release()
                    meter.record_step_time(time.perf_counter() - tic)
                    break

            gk.backward(total)
            grad = x.grad
            if config.grad_clip is not None:
                grad = _clip_grads(grad, config.grad_clip)
            x.values = adam_update(opt, x.values, grad, config.lr)
            x.grad = None
            steps_done += 1
            meter.record_step_time(time.perf_counter() - tic)
    finally:
        if scope is not None:
            scope.__exit__(None, None, None)

    return _freeze()
