"""Boundary-discontinuity score for stitched or extended clips.

Methods that pin a region of the output to a reference can satisfy the
pin while jumping audibly at the region's edge.  The score compares the
frame-to-frame change across the boundary with the typical change inside
a window around it, for two descriptors: the full spectral column and
the smoothed loudness curve.  A clip that evolves through the boundary
the way it evolves everywhere else scores near 0; a hard splice scores
high.
"""

from __future__ import annotations

import numpy as np

from .. import gradkit as gk
from ..features import IntensityExtractorSpec, intensity_curve

__all__ = ["seam_metric"]


def _excess(track: np.ndarray, boundary: int, halfwidth: int) -> float:
    """How much the jump at ``boundary`` exceeds local typical jumps.

    ``track`` is [..., N]; jumps are L2 norms of frame differences.  The
    boundary jump is diff index boundary-1 (between frames boundary-1 and
    boundary); the reference level is the mean of the other jumps within
    ``halfwidth`` frames.  Returns max(jump/typical - 1, 0).
    """
    diffs = np.diff(track, axis=-1)
    jumps = np.sqrt(np.sum(
        diffs.reshape(-1, diffs.shape[-1]) ** 2, axis=0))
    at = boundary - 1
    lo = max(0, at - halfwidth)
    hi = min(jumps.size, at + halfwidth + 1)
    window = np.concatenate([jumps[lo:at], jumps[at + 1:hi]])
    typical = float(np.mean(window))
    if typical <= 0.0:
        return float(jumps[at] > 0.0)
    return max(float(jumps[at]) / typical - 1.0, 0.0)


def seam_metric(x_full: np.ndarray, boundary_frame: int,
                halfwidth: int = 12) -> float:
    """Excess discontinuity at a frame boundary, averaged over descriptors.

    ``x_full`` is one clip as an [F, N] grid; ``boundary_frame`` is the
    first frame of the second region.  0 means the boundary is no rougher
    than its neighborhood; 1 means the jump is twice the local norm.

    A genuine musical onset at the boundary also scores high — the metric
    cannot tell a splice from a note change, so method comparisons must
    evaluate every method at the same boundary frame.
    """
    x = np.asarray(x_full, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected an [F, N] grid, got shape {x.shape}")
    n = x.shape[1]
    if not 1 <= boundary_frame <= n - 1:
        raise ValueError(f"boundary frame {boundary_frame} outside 1..{n - 1}")
    if halfwidth < 2:
        raise ValueError("halfwidth must be at least 2")
    spec = IntensityExtractorSpec(window=min(17, n - (1 - n % 2)))
    curve = intensity_curve(gk.constant(x), spec).values
    return 0.5 * (_excess(x, boundary_frame, halfwidth)
                  + _excess(curve, boundary_frame, halfwidth))
