"""Loudness envelope: per-frame RMS in dB, floored and smoothed.

The curve is differentiable end to end: exp for the amplitude map, mean
over frequency, log for dB, a relu-composed floor, and a moving average
done as an explicit conv2d over edge-replicated padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import gradkit as gk
from .scaling import DB_RANGE, amp_coeff

__all__ = ["IntensityExtractorSpec", "intensity_curve", "intensity_mse",
           "intensity_corr_loss", "smooth_1d"]


@dataclass(frozen=True)
class IntensityExtractorSpec:
    """Window length must be odd so the average stays centered."""

    window: int = 17
    floor_db: float = -60.0
    db_range: float = DB_RANGE

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and positive, got {self.window}")
        if not -self.db_range <= self.floor_db <= 0:
            raise ValueError(f"floor {self.floor_db} outside [-{self.db_range}, 0]")


def smooth_1d(curve, window: int):
    """Centered moving average with edge-replicated padding; [N] -> [N]."""
    curve = gk.as_tensor(curve)
    n = curve.shape[0]
    if n < window:
        raise ValueError(f"curve of {n} frames shorter than window {window}")
    half = window // 2
    idx = np.clip(np.arange(-half, n + half), 0, n - 1)
    padded = gk.gather(curve, idx, axis=0)
    as_img = gk.reshape(padded, (1, 1, 1, n + 2 * half))
    kernel = gk.constant(np.full((1, 1, 1, window), 1.0 / window,
                                 dtype=curve.dtype))
    smoothed = gk.conv2d(as_img, kernel)
    return gk.reshape(smoothed, (n,))


def intensity_curve(x0, spec: IntensityExtractorSpec = IntensityExtractorSpec()):
    """[F, N] grid -> smoothed loudness per frame in dB."""
    x0 = gk.as_tensor(x0)
    if x0.ndim != 2:
        raise ValueError(f"expected [F, N] grid, got shape {x0.shape}")
    k2 = 2.0 * amp_coeff(spec.db_range)
    power = gk.exp(gk.mul(gk.add(x0, -1.0), k2))
    mean_sq = gk.reduce_mean(power, axis=0)                   # [N]
    db = gk.mul(gk.log(mean_sq), 10.0 / math.log(10.0))      # 10 log10 of power
    above = gk.nonlinearity(gk.add(db, -spec.floor_db), "relu")
    floored = gk.add(above, spec.floor_db)
    return smooth_1d(floored, spec.window)


def intensity_mse(curve, target):
    """Mean squared envelope error in dB^2."""
    curve = gk.as_tensor(curve)
    t = gk.constant(np.asarray(target, dtype=curve.dtype))
    if t.shape != curve.shape:
        raise ValueError(f"target shape {t.shape} != curve shape {curve.shape}")
    diff = gk.add(curve, gk.mul(t, -1.0))
    return gk.reduce_mean(gk.mul(diff, diff))


def intensity_corr_loss(curve, target, eps: float = 1e-8):
    """Negative Pearson correlation between curve and target envelope.

    Shape-only objective: invariant to gain and offset of the curve.
    Raises on (near-)constant inputs, where correlation is undefined.
    """
    curve = gk.as_tensor(curve)
    t = np.asarray(target, dtype=curve.dtype)
    if t.shape != curve.shape:
        raise ValueError(f"target shape {t.shape} != curve shape {curve.shape}")
    if float(np.std(t)) < 1e-9 or float(np.std(curve.values)) < 1e-9:
        raise ValueError("correlation undefined for a flat envelope")
    n = curve.shape[0]
    c_mu = gk.reduce_mean(curve)
    c_cent = gk.add(curve, gk.mul(c_mu, -1.0))
    t_cent = gk.constant(t - t.mean())
    cov = gk.reduce_mean(gk.mul(c_cent, t_cent))
    var_c = gk.add(gk.reduce_mean(gk.mul(c_cent, c_cent)), eps)
    denom = gk.sqrt(gk.mul(var_c, float(np.mean((t - t.mean()) ** 2)) + eps))
    rho = gk.mul(cov, gk.power(denom, -1.0))
    return gk.mul(rho, -1.0)
