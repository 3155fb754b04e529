"""Recovering an initial noise that decodes (approximately) to a clip.

The deterministic clean-estimate sampler admits an approximate inverse:
walk the step grid upward, at each level predicting noise from the
current state at the target level and solving the downward update for
the higher-noise state.  The approximation error is the mismatch between
that prediction and the one the forward pass would have used — small for
smooth models, growing with guidance scale.  The crude alternative is to
just corrupt the clip with fresh Gaussian noise to the top level.
"""

from __future__ import annotations

import numpy as np

from .. import gradkit as gk
from ..diffcore import NoiseSchedule, SamplerSpec, cfg_predict, forward_diffuse
from ..diffcore.samplers import _edict_coeffs

__all__ = ["ddim_invert", "naive_invert"]


def ddim_invert(model, x0: np.ndarray, cond, spec: SamplerSpec,
                schedule: NoiseSchedule) -> np.ndarray:
    """Ascend the step grid, exactly undoing each noiseless update.

    Each downward transition is x_low = a x_high + b eps; the ascent
    solves for x_high using the noise predicted at the higher level from
    the current (lower) state — the standard one-step-lag approximation,
    exact for a state-independent model.
    """
    if spec.kind != "ddim":
        raise ValueError("inversion runs on the ddim sampler")
    if not spec.deterministic:
        raise ValueError("inversion needs the noiseless sampler (sigma zero)")
    x = np.array(x0, dtype=float, copy=True)
    for t, t_prev in reversed(spec.transitions()):
        eps = cfg_predict(model, gk.constant(x), t, cond,
                          spec.cfg_scale).values
        a, b = _edict_coeffs(schedule, t, t_prev)
        x = (x - b * eps) / a
    return x


def naive_invert(x_ref: np.ndarray, t: int, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """Corrupt a clip straight to level t with fresh Gaussian noise."""
    x_ref = np.asarray(x_ref)
    noise = rng.standard_normal(x_ref.shape).astype(x_ref.dtype, copy=False)
    return forward_diffuse(x_ref, t, noise, schedule)
