"""Chroma fold and melody objectives.

Linear power is folded into 12 pitch classes with a fixed indicator
matrix, columns are normalized to unit sum (with an epsilon so silence
degrades to a uniform distribution), and the melody loss is the mean
negative log of the chroma mass at the target class per frame.
"""

from __future__ import annotations

import numpy as np

from .. import gradkit as gk
from .pitch import N_CLASSES, fold_matrix
from .scaling import DB_RANGE, unit_to_power

__all__ = ["chroma", "melody_nll", "melody_accuracy", "UNIFORM_NLL"]

_NORM_EPS = 1e-12
_LOG_EPS = 1e-9

# silence folds to 1/12 everywhere; handy reference level for melody losses
UNIFORM_NLL = float(-np.log(1.0 / N_CLASSES + _LOG_EPS))


def chroma(x0, db_range: float = DB_RANGE):
    """[F, N] grid -> [12, N] column-normalized pitch-class energy."""
    x0 = gk.as_tensor(x0)
    if x0.ndim != 2:
        raise ValueError(f"expected [F, N] grid, got shape {x0.shape}")
    power = unit_to_power(x0, db_range)
    fold = gk.constant(fold_matrix(x0.shape[0], dtype=x0.dtype))
    mass = gk.matmul(fold, power)                                # [12, N]
    col_sum = gk.add(gk.reduce_sum(mass, axis=0, keepdims=True), _NORM_EPS)
    return gk.mul(mass, gk.power(col_sum, -1.0))


def _check_classes(classes: np.ndarray, n_frames: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    if classes.shape != (n_frames,):
        raise ValueError(f"need one class per frame, got {classes.shape} for "
                         f"{n_frames} frames")
    if np.any(classes < 1) or np.any(classes > N_CLASSES):
        raise ValueError(f"classes must lie in 1..{N_CLASSES}")
    return classes


def melody_nll(x0, classes, db_range: float = DB_RANGE):
    """Mean negative log chroma mass at the target class, per frame.

    A uniform chroma scores ln(12) ~= 2.485; a perfect one-hot match
    approaches 0.
    """
    x0 = gk.as_tensor(x0)
    c = chroma(x0, db_range)
    n = c.shape[1]
    classes = _check_classes(classes, n)
    onehot = np.zeros((N_CLASSES, n), dtype=x0.dtype)
    onehot[classes - 1, np.arange(n)] = 1.0
    log_c = gk.log(gk.add(c, _LOG_EPS))
    picked = gk.reduce_sum(gk.mul(log_c, gk.constant(onehot)))
    return gk.mul(picked, -1.0 / n)


def melody_accuracy(x0_values: np.ndarray, classes,
                    db_range: float = DB_RANGE) -> float:
    """Fraction of frames whose chroma argmax hits the target class.

    Ties resolve to the lowest class index (numpy argmax order).
    """
    c = chroma(gk.constant(np.asarray(x0_values)), db_range).values
    classes = _check_classes(classes, c.shape[1])
    predicted = np.argmax(c, axis=0) + 1
    return float(np.mean(predicted == classes))
