"""Timbral self-similarity over time, for section-structure objectives.

Pipeline: log power -> DCT over frequency (keep low-order coefficients,
drop the loudness-proportional 0th) -> per-coefficient z-score across
time -> normalized Gram matrix, so entries are mean products of
standardized timbre vectors with diagonal ~1.  Optional smoothing is a
separable quadratic Savitzky-Golay filter applied along both axes.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import savgol_coeffs

from .. import gradkit as gk
from .scaling import DB_RANGE, unit_to_power

__all__ = ["mfcc_ss", "structure_mse", "structure_target_from_diagram",
           "structure_transfer_target"]

_POWER_FLOOR = 1e-5
_VAR_EPS = 1e-8


def _dct_rows(n_rows: int, keep: int, dtype) -> np.ndarray:
    """Orthonormal DCT-II basis rows 1..keep (row 0 dropped)."""
    j = np.arange(1, keep + 1)[:, None].astype(np.float64)
    b = np.arange(n_rows)[None, :].astype(np.float64)
    basis = np.cos(np.pi * (2 * b + 1) * j / (2 * n_rows)) * np.sqrt(2.0 / n_rows)
    return basis.astype(dtype)


def _sep_smooth(s, window: int, order: int):
    """Separable Savitzky-Golay smoothing of an [N, N] tensor."""
    n = s.shape[0]
    if n < window:
        raise ValueError(f"matrix of size {n} smaller than smoothing window {window}")
    half = window // 2
    idx = np.clip(np.arange(-half, n + half), 0, n - 1)
    taps = savgol_coeffs(window, order).astype(s.dtype)
    k_row = gk.constant(taps.reshape(1, 1, window, 1))
    k_col = gk.constant(taps.reshape(1, 1, 1, window))
    padded = gk.gather(gk.gather(s, idx, axis=0), idx, axis=1)
    img = gk.reshape(padded, (1, 1, n + 2 * half, n + 2 * half))
    by_rows = gk.conv2d(img, k_row)
    both = gk.conv2d(by_rows, k_col)
    return gk.reshape(both, (n, n))


def mfcc_ss(x0, n_coeffs: int = 20, smooth: bool = True, window: int = 9,
            order: int = 2, db_range: float = DB_RANGE):
    """[F, N] grid -> [N, N] self-similarity of standardized timbre vectors."""
    x0 = gk.as_tensor(x0)
    if x0.ndim != 2:
        raise ValueError(f"expected [F, N] grid, got shape {x0.shape}")
    n_rows, n = x0.shape
    if n_coeffs < 2 or n_coeffs > n_rows:
        raise ValueError(f"n_coeffs {n_coeffs} outside 2..{n_rows}")
    power = unit_to_power(x0, db_range)
    log_power = gk.log(gk.add(power, _POWER_FLOOR))
    basis = gk.constant(_dct_rows(n_rows, n_coeffs - 1, x0.dtype))
    coeffs = gk.matmul(basis, log_power)                        # [C, N]
    mu = gk.reduce_mean(coeffs, axis=1, keepdims=True)
    centered = gk.add(coeffs, gk.mul(mu, -1.0))
    var = gk.reduce_mean(gk.mul(centered, centered), axis=1, keepdims=True)
    std_inv = gk.power(gk.add(var, _VAR_EPS), -0.5)
    z = gk.mul(centered, std_inv)
    gram = gk.mul(gk.matmul(z, z, transpose_a=True), 1.0 / (n_coeffs - 1))
    if smooth:
        gram = _sep_smooth(gram, window, order)
    return gram


def structure_mse(ss, target):
    ss = gk.as_tensor(ss)
    t = np.asarray(target)
    if t.shape != ss.shape:
        raise ValueError(f"target shape {t.shape} != matrix shape {ss.shape}")
    diff = gk.add(ss, gk.mul(gk.constant(t.astype(ss.dtype)), -1.0))
    return gk.reduce_mean(gk.mul(diff, diff))


def structure_target_from_diagram(diagram: str, n_frames: int) -> np.ndarray:
    """Block target from a section diagram like 'ABBA'.

    Frames split as evenly as possible into consecutive sections; entry
    (i, j) is 1 where sections share a letter, else 0.
    """
    if len(diagram) == 0:
        raise ValueError("diagram must name at least one section")
    if n_frames < len(diagram):
        raise ValueError(f"{n_frames} frames cannot hold {len(diagram)} sections")
    letters = np.empty(n_frames, dtype="U1")
    for section, frames in zip(diagram, np.array_split(np.arange(n_frames),
                                                       len(diagram))):
        letters[frames] = section
    return (letters[:, None] == letters[None, :]).astype(np.float64)


def structure_transfer_target(ref_values: np.ndarray, n_coeffs: int = 20,
                              smooth: bool = True, window: int = 9,
                              order: int = 2,
                              db_range: float = DB_RANGE) -> np.ndarray:
    """Self-similarity of a reference clip, frozen as a plain array."""
    ss = mfcc_ss(gk.constant(np.asarray(ref_values)), n_coeffs=n_coeffs,
                 smooth=smooth, window=window, order=order, db_range=db_range)
    return ss.values
