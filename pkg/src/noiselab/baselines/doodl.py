"""Noise optimization through coupled invertible sampling.

Same outer loop as the checkpointed noise optimizer — Adam on the initial
noise of a frozen deterministic sampler — but the reverse process is the
dual-chain coupled sampler, whose algebraic invertibility admits a second
backprop strategy: store only the endpoint pair and reconstruct every
transition's inputs by running the inverse, at the price of extra model
calls.  Per iteration with guidance the checkpointed mode costs twice the
single-chain optimizer's model calls and the invert-recompute mode three
times.

After every Adam update the noise is optionally renormalized to the
sphere of radius sqrt(D) and blended with fresh Gaussian noise,
x <- sqrt(1 - g^2) x + g e, which keeps iterates in the sampler's
high-density shell.  The two chains start from the same noise; if their
gap explodes relative to its first-iteration size, the run aborts with
the partial record attached.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import gradkit as gk
from ..diffcore import (NoiseSchedule, SamplerSpec, edict_invert_step,
                        edict_sample_pair, edict_step)
from ..diffcore.samplers import _require_rng
from ..features import ControlTask, batched_multi_loss
from ..ditto.adam import AdamState, adam_update
from ..ditto.loop import OptRunRecord, OptimizerDiverged

__all__ = ["DoodlConfig", "doodl_optimize"]

_BACKPROP_MODES = ("checkpointed", "invert")


@dataclass
class DoodlConfig:
    """Optimization knobs for the invertible-sampler noise loop."""

    k_max: int = 70
    lr: float = 5e-3
    tau: float | None = None          # early-stop loss threshold, per sample
    renorm: bool = True               # project noise back onto the sqrt(D) sphere
    noise_gamma: float = 0.05         # fresh-noise blend weight, in [0, 0.5)
    backprop_mode: str = "checkpointed"
    divergence_factor: float = 1e3    # chain-gap abort multiple

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.noise_gamma < 0.5:
            raise ValueError("noise_gamma must lie in [0, 0.5)")
        if self.backprop_mode not in _BACKPROP_MODES:
            raise ValueError(f"backprop_mode must be one of {_BACKPROP_MODES}")
        if self.divergence_factor <= 0:
            raise ValueError("divergence_factor must be positive")


def _renorm_sphere(x: np.ndarray) -> np.ndarray:
    """Scale each sample to L2 norm sqrt(D), D its element count."""
    flat = x.reshape(x.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    target = math.sqrt(flat.shape[1])
    return (flat * (target / np.maximum(norms, 1e-30))).reshape(x.shape)


def _invert_grad(model, out_a: np.ndarray, out_b: np.ndarray, g_a: np.ndarray,
                 cond, spec: SamplerSpec, schedule: NoiseSchedule
                 ) -> np.ndarray:
    """Gradient w.r.t. the shared initial noise, reconstructing inputs.

    Walks the step grid back up: the inverse step rebuilds each
    transition's input pair, the transition re-runs on a small tape, and
    the output cotangents pull back through it.  Reconstruction is exact
    up to float round-off, which is the price of not storing boundaries.
    """
    cur_a, cur_b = out_a, out_b
    g_b = np.zeros_like(g_a)
    for t, t_prev in reversed(spec.transitions()):
        prev = edict_invert_step(model, gk.constant(cur_a), gk.constant(cur_b),
                                 t, t_prev, cond, schedule,
                                 mix=spec.edict_mix, cfg_scale=spec.cfg_scale)
        pa, pb = prev[0].values, prev[1].values
        leaf_a = gk.tensor(pa, requires_grad=True)
        leaf_b = gk.tensor(pb, requires_grad=True)
        tape = gk.Tape()
        with tape:
            nxt_a, nxt_b = edict_step(model, leaf_a, leaf_b, t, t_prev, cond,
                                      schedule, mix=spec.edict_mix,
                                      cfg_scale=spec.cfg_scale)
        leaf_grads = tape.run_backward([(nxt_a, g_a), (nxt_b, g_b)],
                                       accumulate_leaf_grads=False)
        tape.release()
        g_a = leaf_grads.get(leaf_a.node, np.zeros_like(pa))
        g_b = leaf_grads.get(leaf_b.node, np.zeros_like(pb))
        cur_a, cur_b = pa, pb
    return g_a + g_b


def doodl_optimize(model, schedule: NoiseSchedule, spec: SamplerSpec,
                   tasks: Sequence[ControlTask] | ControlTask,
                   x_init: np.ndarray, cond=None,
                   config: DoodlConfig = DoodlConfig(),
                   rng: np.random.Generator | None = None,
                   meter: gk.CostMeter | None = None) -> OptRunRecord:
    """Optimize initial noise through the coupled invertible sampler.

    ``x_init`` is [B, 1, F, N] and seeds both chains.  The loss is scored
    on the primary chain's decode.  Requires an edict sampler spec; needs
    ``rng`` when ``config.noise_gamma`` > 0.
    """
    if spec.kind != "edict":
        raise ValueError("invertible-sampler optimization needs an edict spec")
    if isinstance(tasks, ControlTask):
        tasks = [tasks]
    if len(tasks) == 0:
        raise ValueError("need at least one control task")
    if config.noise_gamma > 0.0:
        _require_rng(rng, "noise injection")
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
    gap_limit = None  # armed from the first iteration's chain gap

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
                  "n_steps": int(len(spec.steps)), "batch": batch,
                  "backprop_mode": config.backprop_mode,
                  "renorm": config.renorm,
                  "noise_gamma": config.noise_gamma,
                  "edict_mix": spec.edict_mix})

    try:
        if scope is not None:
            scope.__enter__()
        for k in range(config.k_max):
            tic = time.perf_counter()
            tape = gk.Tape()
            if config.backprop_mode == "checkpointed":
                with tape:
                    out_a, out_b = edict_sample_pair(
                        model, x, x, cond, spec, schedule, checkpointed=True)
                    total, per_sample = batched_multi_loss(out_a, tasks)
                decoded, side = out_a.values, out_b.values
            else:
                pair = edict_sample_pair(model, gk.constant(x.values),
                                         gk.constant(x.values), cond, spec,
                                         schedule)
                decoded, side = pair[0].values, pair[1].values
                leaf = gk.tensor(decoded, requires_grad=True)
                with tape:
                    total, per_sample = batched_multi_loss(leaf, tasks)

            gap = float(np.max(np.abs(decoded - side)))
            if gap_limit is None:
                eps_floor = np.finfo(x.values.dtype).eps \
                    * max(1.0, float(np.max(np.abs(x_init))))
                gap_limit = config.divergence_factor * max(gap, eps_floor)
            if not np.isfinite(gap) or gap > gap_limit:
                tape.release()
                raise OptimizerDiverged(
                    f"chain gap {gap:.3e} exceeded limit {gap_limit:.3e} "
                    f"at step {k}", _freeze())
            if not np.all(np.isfinite(per_sample)):
                tape.release()
                raise OptimizerDiverged(
                    f"loss became non-finite at step {k}", _freeze())
            trace.append(per_sample)

            improved = per_sample < best_loss
            if np.any(improved):
                best_loss = np.where(improved, per_sample, best_loss)
                best_step[improved] = k
                x_best[improved] = decoded[improved]
                noise_best[improved] = x.values[improved]
            if config.tau is not None:
                newly = (first_hit < 0) & (per_sample <= config.tau)
                first_hit[newly] = k
                if np.all(first_hit >= 0):
                    tape.release()
                    meter.record_step_time(time.perf_counter() - tic)
                    break

            gk.backward(total)
            if config.backprop_mode == "checkpointed":
                grad = x.grad
            else:
                grad = _invert_grad(model, decoded, side, leaf.grad, cond,
                                    spec, schedule)
            new_x = adam_update(opt, x.values, grad, config.lr)
            if config.renorm:
                new_x = _renorm_sphere(new_x)
            if config.noise_gamma > 0.0:
                fresh = rng.standard_normal(new_x.shape).astype(
                    new_x.dtype, copy=False)
                new_x = math.sqrt(1.0 - config.noise_gamma ** 2) * new_x \
                    + config.noise_gamma * fresh
            x.values = new_x
            x.grad = None
            steps_done += 1
            meter.record_step_time(time.perf_counter() - tic)
    finally:
        if scope is not None:
            scope.__exit__(None, None, None)

    return _freeze()
