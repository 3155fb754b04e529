"""Reverse-process samplers over a shared step grid.

Every step function is parameterized by the pair (t, t_prev) through
cumulative-alpha ratios, so the same code runs the full training grid or
any strictly decreasing subsequence of it.  Three families:

* ``ddpm_step``: ancestral update with fresh noise (none on the final step);
* ``ddim_step``: deterministic when sigma = 0; with the variance-matching
  sigma rule it reproduces the ancestral update exactly;
* ``edict_step`` / ``edict_invert_step``: two coupled chains with affine
  coupling and mixing, algebraically invertible for mix weights p > 0.

Models are callables ``model(x, t, style) -> eps`` built on gradkit ops;
``style=None`` selects the unconditional branch.  Classifier-free guidance
makes exactly two model calls per prediction whenever scale != 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import gradkit as gk
from .schedule import NoiseSchedule

__all__ = ["Conditioning", "SamplerSpec", "cfg_predict", "x0_estimate",
           "dynamic_threshold", "ddpm_step", "ddim_step", "edict_step",
           "edict_invert_step", "sample", "edict_sample_pair",
           "edict_invert_pair"]

_KINDS = ("ddpm", "ddim", "edict")
_SIGMA_RULES = ("zero", "ddpm", "custom")
EDICT_MIN_MIX = 1e-6


@dataclass(frozen=True)
class Conditioning:
    """Class conditioning for the denoiser; style None means unconditional."""

    style: int | None = None

    def resolved(self) -> int | None:
        return self.style


@dataclass
class SamplerSpec:
    """Which reverse process to run and on what step grid."""

    kind: str
    steps: np.ndarray                      # descending noise levels, last >= 1
    sigma_rule: str = "zero"
    custom_sigmas: np.ndarray | None = None
    cfg_scale: float = 1.0
    use_dynamic_threshold: bool = False
    threshold_percentile: float = 99.5
    edict_mix: float = 0.93

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown sampler kind '{self.kind}'")
        steps = np.asarray(self.steps, dtype=np.int64)
        self.steps = steps
        if steps.ndim != 1 or steps.size == 0:
            raise ValueError("steps must be a non-empty 1-d sequence")
        if steps[-1] < 1:
            raise ValueError("the last step must be a positive noise level")
        if np.any(np.diff(steps) >= 0):
            raise ValueError("steps must decrease strictly")
        if self.sigma_rule not in _SIGMA_RULES:
            raise ValueError(f"unknown sigma rule '{self.sigma_rule}'")
        if self.sigma_rule == "custom":
            if self.custom_sigmas is None or len(self.custom_sigmas) != steps.size:
                raise ValueError("custom sigma rule needs one sigma per step")
        if not 0.0 < self.threshold_percentile <= 100.0:
            raise ValueError("threshold percentile must be in (0, 100]")
        if self.kind == "edict" and not EDICT_MIN_MIX <= self.edict_mix <= 1.0:
            raise ValueError(f"edict mix weight must be in [{EDICT_MIN_MIX}, 1]")

    @property
    def deterministic(self) -> bool:
        if self.kind == "ddpm":
            return False
        if self.kind == "edict":
            return True
        if self.sigma_rule == "zero":
            return True
        if self.sigma_rule == "custom":
            return bool(np.all(np.asarray(self.custom_sigmas) == 0.0))
        return False

    def transitions(self) -> list[tuple[int, int]]:
        """(t, t_prev) pairs; the final transition lands on level 0."""
        targets = list(self.steps[1:]) + [0]
        return [(int(t), int(tp)) for t, tp in zip(self.steps, targets)]


def _style_of(cond) -> int | None:
    if cond is None:
        return None
    if isinstance(cond, Conditioning):
        return cond.resolved()
    return int(cond)


def cfg_predict(model, x, t: int, cond, scale: float = 1.0):
    """Guided noise prediction: scale * eps_cond + (1 - scale) * eps_null.

    Exactly one model call when scale == 1, exactly two otherwise; there is
    deliberately no shortcut for scale == 0 so call-count accounting stays
    uniform.
    """
    style = _style_of(cond)
    if scale == 1.0:
        return model(x, t, style)
    e_cond = model(x, t, style)
    e_null = model(x, t, None)
    return gk.add(gk.mul(e_cond, float(scale)), gk.mul(e_null, 1.0 - float(scale)))


def x0_estimate(model, x, t: int, cond, schedule: NoiseSchedule,
                scale: float = 1.0):
    """One-call clean estimate: (x - sqrt(1 - ab_t) eps) / sqrt(ab_t)."""
    eps = cfg_predict(model, x, t, cond, scale)
    ab = float(schedule.alpha_bar[t])
    return gk.mul(gk.add(x, gk.mul(eps, -math.sqrt(1.0 - ab))),
                  1.0 / math.sqrt(ab))


def dynamic_threshold(x0, percentile: float = 99.5):
    """Percentile clamp of a clean estimate, differentiable a.e.

    s is the given percentile of |x0| (linear-interpolated order statistic,
    floored at 1).  Values are clamped to [-s, s] and rescaled by s when
    s > 1.  The order statistic enters the graph through a gather, so
    gradients flow into the selected entries as well as the clamped body.
    """
    x0 = gk.as_tensor(x0)
    shape = x0.shape
    n = x0.size
    flat = gk.reshape(x0, (n,))
    mag = gk.nonlinearity(flat, "abs")
    order = np.argsort(mag.values, kind="stable")
    pos = (n - 1) * (float(percentile) / 100.0)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    picked = gk.gather(mag, np.array([order[lo], order[hi]]), axis=0)
    weights = np.array([1.0 - frac, frac], dtype=x0.dtype)
    s = gk.reduce_sum(gk.mul(picked, weights))
    if float(s.values) <= 1.0:
        bound = gk.constant(np.asarray(1.0, dtype=x0.dtype))
        scale_back = None
    else:
        bound = s
        scale_back = s
    # clamp(x, -b, b) composed from relu: x - relu(x - b) + relu(-b - x)
    over = gk.nonlinearity(gk.add(flat, gk.mul(bound, -1.0)), "relu")
    clamped_hi = gk.add(flat, gk.mul(over, -1.0))
    under = gk.nonlinearity(gk.mul(gk.add(clamped_hi, bound), -1.0), "relu")
    clamped = gk.add(clamped_hi, under)
    if scale_back is not None:
        clamped = gk.mul(clamped, gk.power(scale_back, -1.0))
    return gk.reshape(clamped, shape)


def _require_rng(rng, what: str):
    if rng is None:
        raise ValueError(f"{what} draws noise; pass a numpy Generator")
    return rng


def _noise_like(x, rng) -> np.ndarray:
    return rng.standard_normal(x.shape).astype(x.dtype, copy=False)


def ddpm_step(model, x, t: int, t_prev: int, cond, schedule: NoiseSchedule,
              *, cfg_scale: float = 1.0, rng=None, noise=None):
    """Ancestral update generalized to arbitrary (t, t_prev) pairs.

    With t_prev = t - 1 this is the textbook posterior-mean step with
    variance (1 - ab_prev)/(1 - ab_t) * (1 - ab_t/ab_prev).  No noise is
    added on a transition that lands at level 0.
    """
    x = gk.as_tensor(x)
    eps = cfg_predict(model, x, t, cond, cfg_scale)
    ab_t = float(schedule.alpha_bar[t])
    ab_prev = float(schedule.alpha_bar[t_prev])
    alpha_eff = ab_t / ab_prev
    mean = gk.mul(gk.add(x, gk.mul(eps, -(1.0 - alpha_eff) / math.sqrt(1.0 - ab_t))),
                  1.0 / math.sqrt(alpha_eff))
    if t_prev == 0:
        return mean
    sigma = math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - alpha_eff))
    if noise is None:
        noise = _noise_like(x.values, _require_rng(rng, "ddpm_step"))
    return gk.add(mean, gk.constant(sigma * noise))


def _ddim_sigma(spec: SamplerSpec, schedule: NoiseSchedule, t: int,
                t_prev: int, step_index: int) -> float:
    if spec.sigma_rule == "zero":
        return 0.0
    ab_t = float(schedule.alpha_bar[t])
    ab_prev = float(schedule.alpha_bar[t_prev])
    if spec.sigma_rule == "ddpm":
        return math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)
                         * (1.0 - ab_t / ab_prev))
    return float(spec.custom_sigmas[step_index])


def ddim_step(model, x, t: int, t_prev: int, cond, schedule: NoiseSchedule,
              *, cfg_scale: float = 1.0, sigma: float = 0.0,
              use_dynamic_threshold: bool = False,
              threshold_percentile: float = 99.5, rng=None, noise=None):
    """Clean-estimate step: sqrt(ab_prev) x0_hat + direction + sigma z.

    The clean estimate is optionally percentile-clamped before
    recombination; the direction term keeps the raw guided eps.
    """
    x = gk.as_tensor(x)
    eps = cfg_predict(model, x, t, cond, cfg_scale)
    ab_t = float(schedule.alpha_bar[t])
    ab_prev = float(schedule.alpha_bar[t_prev])
    x0 = gk.mul(gk.add(x, gk.mul(eps, -math.sqrt(1.0 - ab_t))),
                1.0 / math.sqrt(ab_t))
    if use_dynamic_threshold:
        x0 = dynamic_threshold(x0, threshold_percentile)
    residual = 1.0 - ab_prev - sigma * sigma
    if residual < -1e-12:
        raise ValueError(f"sigma {sigma} too large for target level {t_prev}")
    direction = math.sqrt(max(residual, 0.0))
    out = gk.add(gk.mul(x0, math.sqrt(ab_prev)), gk.mul(eps, direction))
    if sigma > 0.0:
        if noise is None:
            noise = _noise_like(x.values, _require_rng(rng, "ddim_step"))
        out = gk.add(out, gk.constant(sigma * noise))
    return out


def _edict_coeffs(schedule: NoiseSchedule, t_high: int, t_low: int) -> tuple[float, float]:
    ab_high = float(schedule.alpha_bar[t_high])
    ab_low = float(schedule.alpha_bar[t_low])
    a = math.sqrt(ab_low / ab_high)
    b = math.sqrt(1.0 - ab_low) - a * math.sqrt(1.0 - ab_high)
    return a, b


def edict_step(model, x_a, x_b, t: int, t_prev: int, cond,
               schedule: NoiseSchedule, *, mix: float,
               cfg_scale: float = 1.0):
    """One coupled-chain step down: affine coupling both ways, then mixing."""
    x_a, x_b = gk.as_tensor(x_a), gk.as_tensor(x_b)
    a, b = _edict_coeffs(schedule, t, t_prev)
    inter_a = gk.add(gk.mul(x_a, a), gk.mul(cfg_predict(model, x_b, t, cond, cfg_scale), b))
    inter_b = gk.add(gk.mul(x_b, a), gk.mul(cfg_predict(model, inter_a, t, cond, cfg_scale), b))
    next_a = gk.add(gk.mul(inter_a, mix), gk.mul(inter_b, 1.0 - mix))
    next_b = gk.add(gk.mul(inter_b, mix), gk.mul(next_a, 1.0 - mix))
    return next_a, next_b


def edict_invert_step(model, x_a, x_b, t_next: int, t: int, cond,
                      schedule: NoiseSchedule, *, mix: float,
                      cfg_scale: float = 1.0):
    """Exact algebraic inverse of :func:`edict_step` (level t up to t_next)."""
    if mix < EDICT_MIN_MIX:
        raise ValueError(f"mix weight {mix} below invertibility floor {EDICT_MIN_MIX}")
    x_a, x_b = gk.as_tensor(x_a), gk.as_tensor(x_b)
    inv = 1.0 / mix
    inter_b = gk.mul(gk.add(x_b, gk.mul(x_a, -(1.0 - mix))), inv)
    inter_a = gk.mul(gk.add(x_a, gk.mul(inter_b, -(1.0 - mix))), inv)
    a, b = _edict_coeffs(schedule, t_next, t)
    inv_a = 1.0 / a
    prev_b = gk.mul(gk.add(inter_b, gk.mul(cfg_predict(model, inter_a, t_next, cond, cfg_scale), -b)), inv_a)
    prev_a = gk.mul(gk.add(inter_a, gk.mul(cfg_predict(model, prev_b, t_next, cond, cfg_scale), -b)), inv_a)
    return prev_a, prev_b


# ---------------------------------------------------------------------------
# full trajectories

def _step_closure(model, spec: SamplerSpec, schedule: NoiseSchedule, cond,
                  t: int, t_prev: int, index: int, rng):
    if spec.kind == "ddpm":
        def fn(x):
            return ddpm_step(model, x, t, t_prev, cond, schedule,
                             cfg_scale=spec.cfg_scale, rng=rng)
        return fn
    if spec.kind == "ddim":
        sigma = _ddim_sigma(spec, schedule, t, t_prev, index)

        def fn(x):
            return ddim_step(model, x, t, t_prev, cond, schedule,
                             cfg_scale=spec.cfg_scale, sigma=sigma,
                             use_dynamic_threshold=spec.use_dynamic_threshold,
                             threshold_percentile=spec.threshold_percentile,
                             rng=rng)
        return fn

    def fn(x_a, x_b):
        return edict_step(model, x_a, x_b, t, t_prev, cond, schedule,
                          mix=spec.edict_mix, cfg_scale=spec.cfg_scale)
    return fn


def sample(model, x_init, cond, spec: SamplerSpec, schedule: NoiseSchedule,
           *, rng=None, checkpointed: bool = False,
           return_trajectory: bool = False):
    """Run the reverse process from the top of the step grid to level 0.

    ``x_init`` lives at noise level ``spec.steps[0]``.  With
    ``checkpointed=True`` each transition becomes one checkpoint node so a
    surrounding tape stores only per-step boundaries; this requires a
    deterministic spec.  EDICT starts both chains from ``x_init`` and
    returns the primary chain.
    """
    if checkpointed and not spec.deterministic:
        raise ValueError("checkpointed sampling requires a deterministic sampler")
    if not spec.deterministic:
        _require_rng(rng, f"{spec.kind} sampling")
    x = gk.as_tensor(x_init)
    trajectory = [x.values] if return_trajectory else None

    if spec.kind == "edict":
        pair = (x, x)
        for i, (t, t_prev) in enumerate(spec.transitions()):
            fn = _step_closure(model, spec, schedule, cond, t, t_prev, i, rng)
            pair = gk.checkpoint(fn, *pair) if checkpointed else fn(*pair)
            if return_trajectory:
                trajectory.append(pair[0].values)
        out = pair[0]
    else:
        for i, (t, t_prev) in enumerate(spec.transitions()):
            fn = _step_closure(model, spec, schedule, cond, t, t_prev, i, rng)
            x = gk.checkpoint(fn, x) if checkpointed else fn(x)
            if return_trajectory:
                trajectory.append(x.values)
        out = x

    if return_trajectory:
        return out, trajectory
    return out


def edict_sample_pair(model, x_a, x_b, cond, spec: SamplerSpec,
                      schedule: NoiseSchedule, *, checkpointed: bool = False):
    """Coupled-chain trajectory with explicit initial chains; returns both."""
    if spec.kind != "edict":
        raise ValueError("edict_sample_pair needs an edict spec")
    pair = (gk.as_tensor(x_a), gk.as_tensor(x_b))
    for i, (t, t_prev) in enumerate(spec.transitions()):
        fn = _step_closure(model, spec, schedule, cond, t, t_prev, i, None)
        pair = gk.checkpoint(fn, *pair) if checkpointed else fn(*pair)
    return pair


def edict_invert_pair(model, x_a, x_b, cond, spec: SamplerSpec,
                      schedule: NoiseSchedule):
    """Walk the step grid upward, undoing each transition exactly."""
    if spec.kind != "edict":
        raise ValueError("edict_invert_pair needs an edict spec")
    pair = (gk.as_tensor(x_a), gk.as_tensor(x_b))
    for t, t_prev in reversed(spec.transitions()):
        pair = edict_invert_step(model, pair[0], pair[1], t, t_prev, cond,
                                 schedule, mix=spec.edict_mix,
                                 cfg_scale=spec.cfg_scale)
    return pair
