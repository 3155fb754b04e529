"""Pitch layout of the synthetic grids: log-frequency rows, 12 classes.

Rows are spaced a semitone apart, so a harmonic at m times the fundamental
frequency sits round(12 log2 m) rows higher and octaves fold onto the same
class.  The lowest LOW_CUT rows are sub-pitch rumble and are excluded from
chroma folding.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["N_CLASSES", "LOW_CUT", "partial_offsets", "fundamental_row",
           "class_of_row", "fold_matrix"]

N_CLASSES = 12
LOW_CUT = 4  # rows 0..3 carry no pitch information


def partial_offsets(n_partials: int) -> np.ndarray:
    """Row offsets of the first n partials: round(12 log2 m)."""
    return np.array([round(12.0 * math.log2(m)) for m in range(1, n_partials + 1)],
                    dtype=np.int64)


def fundamental_row(pitch_class: int) -> int:
    """Row of the fundamental for class k in 1..12."""
    if not 1 <= pitch_class <= N_CLASSES:
        raise ValueError(f"pitch class {pitch_class} outside 1..{N_CLASSES}")
    return LOW_CUT + (pitch_class - 1)


def class_of_row(row: int) -> int:
    if row < LOW_CUT:
        raise ValueError(f"row {row} is below the pitched range")
    return (row - LOW_CUT) % N_CLASSES + 1


def fold_matrix(n_rows: int, dtype=np.float64) -> np.ndarray:
    """[12, n_rows] indicator matrix summing rows into pitch classes."""
    if n_rows <= LOW_CUT:
        raise ValueError(f"need more than {LOW_CUT} rows, got {n_rows}")
    fold = np.zeros((N_CLASSES, n_rows), dtype=dtype)
    for row in range(LOW_CUT, n_rows):
        fold[class_of_row(row) - 1, row] = 1.0
    return fold
