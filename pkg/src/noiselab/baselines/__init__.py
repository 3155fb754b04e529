"""Inference-time steering baselines sharing the samplers and losses."""

from .doodl import DoodlConfig, doodl_optimize
from .guidance import GuidanceSpec, freedom_sample, gg_sample
from .inversion import ddim_invert, naive_invert
from .masking import multidiffusion_sample, naive_mask_sample

__all__ = [
    "GuidanceSpec", "freedom_sample", "gg_sample",
    "naive_mask_sample", "multidiffusion_sample",
    "DoodlConfig", "doodl_optimize",
    "ddim_invert", "naive_invert",
]
