"""Decoding reused initial noise with a fresh stochastic pass.

An optimized starting noise can be fed back through an ancestral sampler
— same prompt or a new one — to test how much steering survives without
re-optimizing.  Optionally the pass adds per-step gradient guidance
toward the original tasks, which measures whether noise and guidance
stack.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..diffcore import NoiseSchedule, SamplerSpec, sample
from ..features import ControlTask

__all__ = ["reuse_sample"]


def reuse_sample(model, schedule: NoiseSchedule, spec: SamplerSpec,
                 x_init: np.ndarray, cond, rng: np.random.Generator,
                 tasks: Sequence[ControlTask] | None = None,
                 guidance=None) -> np.ndarray:
    """Sample from ``x_init`` under ``spec``; guide per step if tasks given.

    Returns the decoded clips as a plain [B, 1, F, N] array: reuse runs
    are evaluation passes, never differentiated through.
    """
    x_init = np.asarray(x_init)
    if x_init.ndim != 4 or x_init.shape[1] != 1:
        raise ValueError(f"x_init must be [B, 1, F, N], got {x_init.shape}")
    if tasks is None:
        out = sample(model, x_init, cond, spec, schedule, rng=rng)
        return np.asarray(out.values)
    # deferred so the baseline package can in turn build on ditto records
    from ..baselines.guidance import GuidanceSpec, freedom_sample
    guide = guidance if guidance is not None else GuidanceSpec()
    return freedom_sample(model, x_init, cond, spec, schedule, tasks,
                          rng=rng, guide=guide)
