"""Frame-region masks tying generated clips to references, plus masked L2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import gradkit as gk

__all__ = ["RegionMask", "outpaint_mask", "inpaint_mask", "loop_mask",
           "ref_free_loop_regions", "masked_l2"]


@dataclass(frozen=True)
class RegionMask:
    """Paired frame indices: gen_frames in the generated clip must match
    ref_frames in the reference clip."""

    gen_frames: np.ndarray
    ref_frames: np.ndarray

    def __post_init__(self):
        gen = np.asarray(self.gen_frames, dtype=np.int64)
        ref = np.asarray(self.ref_frames, dtype=np.int64)
        object.__setattr__(self, "gen_frames", gen)
        object.__setattr__(self, "ref_frames", ref)
        if gen.ndim != 1 or ref.ndim != 1:
            raise ValueError("mask frame lists must be 1-d")
        if gen.size == 0:
            raise ValueError("mask must cover at least one frame")
        if gen.size != ref.size:
            raise ValueError(f"mask sides disagree: {gen.size} vs {ref.size} frames")
        if np.any(gen < 0) or np.any(ref < 0):
            raise ValueError("mask frames must be non-negative")

    @property
    def n_frames(self) -> int:
        return int(self.gen_frames.size)


def outpaint_mask(ref_len: int, overlap: int) -> RegionMask:
    """Continuation: the first `overlap` generated frames repeat the last
    `overlap` reference frames."""
    if not 0 < overlap <= ref_len:
        raise ValueError(f"overlap {overlap} not in 1..{ref_len}")
    return RegionMask(np.arange(overlap), np.arange(ref_len - overlap, ref_len))


def inpaint_mask(n_frames: int, gap: int, flank: int) -> RegionMask:
    """Fill a centered gap: the two flanking regions must match the reference
    at the same frame positions."""
    if gap <= 0 or flank <= 0:
        raise ValueError("gap and flank must be positive")
    start = (n_frames - gap) // 2
    end = start + gap
    if start - flank < 0 or end + flank > n_frames:
        raise ValueError(f"gap {gap} with flank {flank} exceeds {n_frames} frames")
    idx = np.concatenate([np.arange(start - flank, start), np.arange(end, end + flank)])
    return RegionMask(idx, idx.copy())


def loop_mask(ref_len: int, gen_len: int, overlap: int) -> RegionMask:
    """Loop closure: the last generated frames must match the first
    reference frames so playback can wrap."""
    if not 0 < overlap <= min(ref_len, gen_len):
        raise ValueError(f"overlap {overlap} too large for {ref_len}/{gen_len} frames")
    return RegionMask(np.arange(gen_len - overlap, gen_len), np.arange(overlap))


def ref_free_loop_regions(gen_len: int, period: int, overlap: int
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Self-tie regions for loops without a reference clip.

    Frames [period, period+overlap) must match frames [0, overlap) of the
    same clip.  The regions may not intersect, so the period must be at
    least the overlap.
    """
    if period < overlap:
        raise ValueError(f"period {period} shorter than overlap {overlap}: "
                         "regions would intersect")
    if period + overlap > gen_len:
        raise ValueError(f"period {period} + overlap {overlap} exceeds clip "
                         f"length {gen_len}")
    return np.arange(period, period + overlap), np.arange(overlap)


def masked_l2(x0, ref_values: np.ndarray, mask: RegionMask):
    """Mean squared difference over the masked region pair.

    ``x0`` is a [F, N] grid tensor; the reference side is constant.
    """
    x0 = gk.as_tensor(x0)
    ref = np.asarray(ref_values)
    if x0.ndim != 2 or ref.ndim != 2:
        raise ValueError("masked_l2 expects [F, N] grids")
    if np.max(mask.gen_frames) >= x0.shape[1]:
        raise ValueError("mask exceeds generated clip length")
    if np.max(mask.ref_frames) >= ref.shape[1]:
        raise ValueError("mask exceeds reference clip length")
    gen = gk.gather(x0, mask.gen_frames, axis=1)
    target = gk.constant(ref[:, mask.ref_frames])
    diff = gk.add(gen, gk.mul(target, -1.0))
    return gk.reduce_mean(gk.mul(diff, diff))
