"""Per-step gradient guidance baselines: no noise optimization involved.

Both methods run a plain sampler and, after every transition, nudge the
new state against the task loss evaluated at the one-call clean estimate
from that state — gradient taken through the model.  They differ in the
step-size rule and in an optional hard data-consistency projection:

* ``freedom_sample``: step length normalized per sample to
  ``base_scale / (grad_norm + eps)``, any task.
* ``gg_sample``: constant step ``base_scale``; with ``data_consistency``
  the clean estimate's masked region is overwritten with the reference
  and re-noised, which is only sound for masked-L2 tasks.

Corrections only nudge: each one fights the model prior once and is then
partly washed out by the next transition, which is what noise-space
optimization is compared against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import gradkit as gk
from ..diffcore import (NoiseSchedule, SamplerSpec, cfg_predict,
                        dynamic_threshold, x0_estimate)
from ..diffcore.samplers import _require_rng, _step_closure
from ..features import ControlTask, batched_multi_loss

__all__ = ["GuidanceSpec", "freedom_sample", "gg_sample"]

_ETA_RULES = ("norm", "fixed")


@dataclass(frozen=True)
class GuidanceSpec:
    """Strength and shape of the per-step corrections.

    ``eta_rule`` "norm" scales each correction to L2 length
    ``base_scale`` per sample; "fixed" uses ``base_scale`` as a raw step
    size.  ``data_consistency`` additionally hard-projects the clean
    estimate onto the reference inside masked regions (masked-L2 tasks
    only).  ``base_scale`` 0 with consistency off degrades to plain
    sampling.
    """

    eta_rule: str = "norm"
    base_scale: float = 0.3
    data_consistency: bool = False
    norm_eps: float = 1e-8

    def __post_init__(self):
        if self.eta_rule not in _ETA_RULES:
            raise ValueError(f"eta_rule must be one of {_ETA_RULES}")
        if self.base_scale < 0:
            raise ValueError("base_scale must be non-negative")
        if self.norm_eps <= 0:
            raise ValueError("norm_eps must be positive")


def _validate_state(x_init) -> np.ndarray:
    x = np.array(x_init, copy=True)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"x_init must be [B, 1, F, N], got {x.shape}")
    return x


def _correction(grad: np.ndarray, guide: GuidanceSpec) -> np.ndarray:
    if guide.eta_rule == "fixed":
        return guide.base_scale * grad
    flat = grad.reshape(grad.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1).reshape(-1, 1, 1, 1)
    # a zero-gradient sample gets exactly zero correction
    return grad * (guide.base_scale / (norms + guide.norm_eps))


def _project_masked(x0_values: np.ndarray, tasks: Sequence[ControlTask]) -> np.ndarray:
    out = x0_values.copy()
    for task in tasks:
        if task.feature == "masked_l2":
            ref = np.asarray(task.target)
            out[..., task.mask.gen_frames] = ref[:, task.mask.ref_frames]
    return out


def _guided_sample(model, x_init, cond, spec: SamplerSpec,
                   schedule: NoiseSchedule, tasks: Sequence[ControlTask],
                   rng, guide: GuidanceSpec) -> np.ndarray:
    if spec.kind not in ("ddpm", "ddim"):
        raise ValueError("per-step guidance runs on ddpm or ddim samplers")
    if not spec.deterministic:
        _require_rng(rng, f"{spec.kind} sampling")
    if len(tasks) == 0:
        raise ValueError("need at least one control task")
    x = _validate_state(x_init)
    inert = guide.base_scale == 0.0 and not guide.data_consistency

    for idx, (t, t_prev) in enumerate(spec.transitions()):
        fn = _step_closure(model, spec, schedule, cond, t, t_prev, idx, rng)
        x = fn(gk.constant(x)).values
        if inert:
            continue

        if guide.base_scale > 0.0:
            leaf = gk.tensor(x, requires_grad=True)
            with gk.Tape():
                if t_prev > 0:
                    x0 = x0_estimate(model, leaf, t_prev, cond, schedule,
                                     spec.cfg_scale)
                    if spec.use_dynamic_threshold:
                        # grade the same clean estimate the sampler decodes
                        x0 = dynamic_threshold(x0, spec.threshold_percentile)
                else:
                    x0 = leaf
                total, _ = batched_multi_loss(x0, tasks)
            gk.backward(total)
            x = x - _correction(leaf.grad, guide)

        if guide.data_consistency:
            if t_prev > 0:
                ab = float(schedule.alpha_bar[t_prev])
                eps = cfg_predict(model, gk.constant(x), t_prev, cond,
                                  spec.cfg_scale).values
                x0_val = (x - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
                if spec.use_dynamic_threshold:
                    x0_val = dynamic_threshold(
                        gk.constant(x0_val), spec.threshold_percentile).values
                x0_val = _project_masked(x0_val, tasks)
                x = math.sqrt(ab) * x0_val + math.sqrt(1.0 - ab) * eps
            else:
                x = _project_masked(x, tasks)
    return x


def freedom_sample(model, x_init: np.ndarray, cond, spec: SamplerSpec,
                   schedule: NoiseSchedule, tasks: Sequence[ControlTask],
                   rng: np.random.Generator | None = None,
                   guide: GuidanceSpec = GuidanceSpec()) -> np.ndarray:
    """Sampling with norm-scaled post-step task corrections; returns values.

    After the transition onto level ``t_prev`` the state moves against the
    gradient of the task loss at its one-call clean estimate, scaled to L2
    length ``guide.base_scale`` per sample (a zero gradient moves nothing).
    """
    if guide.eta_rule != "norm":
        raise ValueError("norm-scaled guidance needs eta_rule='norm'")
    if guide.data_consistency:
        raise ValueError("data consistency belongs to the fixed-rate variant")
    return _guided_sample(model, x_init, cond, spec, schedule, tasks, rng, guide)


def gg_sample(model, x_init: np.ndarray, cond, spec: SamplerSpec,
              schedule: NoiseSchedule, tasks: Sequence[ControlTask],
              rng: np.random.Generator | None = None,
              guide: GuidanceSpec = GuidanceSpec(
                  eta_rule="fixed", base_scale=0.1, data_consistency=True),
              ) -> np.ndarray:
    """Fixed-rate guidance with optional hard data consistency.

    The gradient update matches :func:`freedom_sample` but with a constant
    step size.  With ``data_consistency`` every masked-L2 task's region of
    the clean estimate is overwritten with its reference and the state
    re-noised around the projected estimate; tasks whose feature is not a
    masked L2 are refused in that mode, since the projection has no
    meaning for them.
    """
    if guide.eta_rule != "fixed":
        raise ValueError("fixed-rate guidance needs eta_rule='fixed'")
    if guide.data_consistency:
        bad = [t.feature for t in tasks if t.feature != "masked_l2"]
        if bad:
            raise ValueError(
                f"data consistency projects masked_l2 references; it cannot "
                f"honor {bad}")
    return _guided_sample(model, x_init, cond, spec, schedule, tasks, rng, guide)
