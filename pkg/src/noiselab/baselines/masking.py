"""Inpainting-style baselines: hard replacement inside the sampler loop.

After every transition the masked frames of the state are tied to the
reference clip carried to the state's own noise level with fresh noise
(the final transition lands at level 0, where the tie is the reference
itself).  The naive variant overwrites; the averaging variant blends the
two trajectories and can stop part-way so free sampling finishes the
clip.  Neither sees the task loss — the seams these methods leave at
mask boundaries are what gradient-based steering is measured against.
"""

from __future__ import annotations

import numpy as np

from .. import gradkit as gk
from ..diffcore import NoiseSchedule, SamplerSpec, forward_diffuse
from ..diffcore.samplers import _require_rng, _step_closure
from ..features import RegionMask

__all__ = ["naive_mask_sample", "multidiffusion_sample"]


def _validate(x_init, ref_values, mask) -> tuple[np.ndarray, np.ndarray]:
    x = np.array(x_init, copy=True)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"x_init must be [B, 1, F, N], got {x.shape}")
    ref = np.asarray(ref_values)
    if mask is None:
        return x, ref
    if ref.ndim != 2 or ref.shape[0] != x.shape[2]:
        raise ValueError(f"reference must be [F, N_ref] with F={x.shape[2]}, "
                         f"got {ref.shape}")
    if np.max(mask.gen_frames) >= x.shape[3]:
        raise ValueError("mask exceeds generated clip length")
    if np.max(mask.ref_frames) >= ref.shape[1]:
        raise ValueError("mask exceeds reference clip length")
    return x, ref


def _ref_block_at(ref: np.ndarray, mask: RegionMask, t: int,
                  schedule: NoiseSchedule, batch: int, rng) -> np.ndarray:
    """Masked reference frames carried to noise level t with fresh noise."""
    block = ref[:, mask.ref_frames]
    shaped = np.broadcast_to(block, (batch, 1) + block.shape)
    noise = rng.standard_normal(shaped.shape).astype(ref.dtype, copy=False)
    return forward_diffuse(shaped, t, noise, schedule)


def _masked_walk(model, schedule, spec, ref_values, mask, x_init, cond, rng,
                 combine, active) -> np.ndarray:
    x, ref = _validate(x_init, ref_values, mask)
    if mask is not None or not spec.deterministic:
        _require_rng(rng, "masked sampling")
    if spec.kind not in ("ddpm", "ddim"):
        raise ValueError("masked sampling runs on ddpm or ddim samplers")
    for idx, (t, t_prev) in enumerate(spec.transitions()):
        fn = _step_closure(model, spec, schedule, cond, t, t_prev, idx, rng)
        x = fn(gk.constant(x)).values
        if mask is not None and active(idx):
            block = _ref_block_at(ref, mask, t_prev, schedule, x.shape[0], rng)
            x[..., mask.gen_frames] = combine(x[..., mask.gen_frames], block)
    return x


def naive_mask_sample(model, schedule: NoiseSchedule, spec: SamplerSpec,
                      ref_values: np.ndarray, mask: RegionMask | None,
                      x_init: np.ndarray, cond=None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Sampling with the masked region overwritten after every step.

    ``mask`` pairs generated frames with reference frames; ``None`` (or an
    empty pairing) degrades to plain sampling.  The overwrite happens at
    the post-step noise level, so the final output carries the reference
    verbatim inside the mask — matching content for free, with no
    mechanism to smooth the boundary.
    """
    return _masked_walk(model, schedule, spec, ref_values, mask, x_init,
                        cond, rng, combine=lambda cur, block: block,
                        active=lambda idx: True)


def multidiffusion_sample(model, schedule: NoiseSchedule, spec: SamplerSpec,
                          ref_values: np.ndarray, mask: RegionMask | None,
                          x_init: np.ndarray, cond=None,
                          rng: np.random.Generator | None = None,
                          stop_fraction: float = 1.0) -> np.ndarray:
    """Sampling that averages the masked region with the reference path.

    Like the naive overwrite but the masked frames become the mean of the
    generated state and the noised reference, and only while the step
    index is below ``stop_fraction`` of the trajectory: 1 keeps averaging
    to the end, 0.5 frees the second half, 0 is plain sampling.
    """
    if not 0.0 <= stop_fraction <= 1.0:
        raise ValueError("stop_fraction must lie in [0, 1]")
    n = len(spec.steps)
    return _masked_walk(model, schedule, spec, ref_values, mask, x_init,
                        cond, rng,
                        combine=lambda cur, block: 0.5 * (cur + block),
                        active=lambda idx: idx < stop_fraction * n)
