"""Control objectives bundled as tasks the optimizers can evaluate.

A ControlTask names a feature, carries its target payload, and evaluates
a scalar loss on a clean grid tensor.  Multi-objective runs average the
weighted per-task losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import gradkit as gk
from .chroma import melody_nll
from .intensity import (IntensityExtractorSpec, intensity_corr_loss,
                        intensity_curve, intensity_mse)
from .masks import RegionMask, masked_l2
from .structure import mfcc_ss, structure_mse

__all__ = ["ControlTask", "multi_loss", "batched_multi_loss",
           "inversion_loss", "self_loop_loss", "as_grid", "FEATURES"]

FEATURES = ("intensity", "intensity_corr", "melody", "structure",
            "masked_l2", "self_loop", "inversion")


def as_grid(x0):
    """Accept [F, N] or [1, 1, F, N] tensors; return the [F, N] view."""
    x0 = gk.as_tensor(x0)
    if x0.ndim == 2:
        return x0
    if x0.ndim == 4 and x0.shape[0] == 1 and x0.shape[1] == 1:
        return gk.reshape(x0, (x0.shape[2], x0.shape[3]))
    raise ValueError(f"expected [F, N] or [1, 1, F, N], got {x0.shape}")


def inversion_loss(x0, ref_values: np.ndarray):
    """Plain reconstruction MSE against a full reference grid."""
    x0 = as_grid(x0)
    ref = np.asarray(ref_values)
    if ref.shape != x0.shape:
        raise ValueError(f"reference shape {ref.shape} != grid shape {x0.shape}")
    diff = gk.add(x0, gk.mul(gk.constant(ref.astype(x0.dtype)), -1.0))
    return gk.reduce_mean(gk.mul(diff, diff))


def self_loop_loss(x0, regions: tuple[np.ndarray, np.ndarray]):
    """Tie one region of the clip to another region of the same clip.

    The second region acts as the target and is detached: each evaluation
    chases the current content there without pushing gradients into it.
    """
    x0 = as_grid(x0)
    src, dst = regions
    gen = gk.gather(x0, np.asarray(src), axis=1)
    target = gk.constant(x0.values[:, np.asarray(dst)])
    diff = gk.add(gen, gk.mul(target, -1.0))
    return gk.reduce_mean(gk.mul(diff, diff))


@dataclass
class ControlTask:
    """One steering objective: feature id, target payload, weight, masks."""

    feature: str
    target: object = None
    weight: float = 1.0
    mask: RegionMask | None = None
    regions: tuple[np.ndarray, np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.feature not in FEATURES:
            raise ValueError(f"unknown feature '{self.feature}'; "
                             f"expected one of {FEATURES}")
        if self.weight <= 0:
            raise ValueError("task weight must be positive")
        if self.feature == "masked_l2" and self.mask is None:
            raise ValueError("masked_l2 needs a RegionMask")
        if self.feature == "self_loop" and self.regions is None:
            raise ValueError("self_loop needs a pair of frame regions")
        if self.feature in ("intensity", "intensity_corr", "melody",
                            "structure", "inversion", "masked_l2") \
                and self.target is None:
            raise ValueError(f"feature '{self.feature}' needs a target")

    def loss(self, x0):
        """Scalar loss of this task on a clean grid tensor."""
        grid = as_grid(x0)
        if self.feature in ("intensity", "intensity_corr"):
            spec = self.params.get("extractor", IntensityExtractorSpec())
            curve = intensity_curve(grid, spec)
            if self.feature == "intensity":
                return intensity_mse(curve, self.target)
            return intensity_corr_loss(curve, self.target)
        if self.feature == "melody":
            return melody_nll(grid, self.target)
        if self.feature == "structure":
            ss = mfcc_ss(grid, **{k: v for k, v in self.params.items()
                                  if k in ("n_coeffs", "smooth", "window", "order")})
            return structure_mse(ss, self.target)
        if self.feature == "masked_l2":
            return masked_l2(grid, self.target, self.mask)
        if self.feature == "self_loop":
            return self_loop_loss(grid, self.regions)
        return inversion_loss(grid, self.target)


def multi_loss(x0, tasks: Sequence[ControlTask]):
    """Weighted mean of task losses: (1/M) sum_i w_i L_i."""
    if len(tasks) == 0:
        raise ValueError("multi_loss needs at least one task")
    grid = as_grid(x0)
    total = None
    for task in tasks:
        term = gk.mul(task.loss(grid), float(task.weight))
        total = term if total is None else gk.add(total, term)
    return gk.mul(total, 1.0 / len(tasks))


def batched_multi_loss(x0, tasks: Sequence[ControlTask]):
    """Per-sample multi-task losses over a [B, 1, F, N] tensor.

    Returns (total, values): ``total`` is the SUM over samples — not the
    mean — so each sample's gradient block is exactly what a solo run
    would produce; ``values`` holds the float loss per sample.
    """
    x0 = gk.as_tensor(x0)
    if x0.ndim != 4 or x0.shape[1] != 1:
        raise ValueError(f"expected [B, 1, F, N], got {x0.shape}")
    total = None
    values = np.empty(x0.shape[0])
    for b in range(x0.shape[0]):
        lb = multi_loss(x0[b:b + 1], tasks)
        values[b] = float(lb.values)
        total = lb if total is None else gk.add(total, lb)
    return total, values
