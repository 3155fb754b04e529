"""Diffusion core: noise schedules, forward corruption, reverse samplers."""

from .schedule import (NoiseSchedule, build_cosine_schedule, forward_diffuse,
                       uniform_steps)
from .samplers import (Conditioning, SamplerSpec, cfg_predict, ddim_step,
                       ddpm_step, dynamic_threshold, edict_invert_pair,
                       edict_invert_step, edict_sample_pair, edict_step,
                       sample, x0_estimate)

__all__ = [
    "NoiseSchedule", "build_cosine_schedule", "forward_diffuse",
    "uniform_steps", "Conditioning", "SamplerSpec", "cfg_predict",
    "x0_estimate", "dynamic_threshold", "ddpm_step", "ddim_step",
    "edict_step", "edict_invert_step", "sample", "edict_sample_pair",
    "edict_invert_pair",
]
