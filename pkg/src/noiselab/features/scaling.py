"""Value-domain conventions for the spectrogram grids.

Grids store loudness in [-1, 1]: value v maps to dB = R * (v - 1) / 2 for
dynamic range R, so v = 1 is 0 dBFS and v = -1 is the floor at -R dB.
Linear amplitude is exp(K * (v - 1)) with K = R * ln(10) / 40; feature
extractors that need linear power therefore stay inside the primitive op
set (one exp).
"""

from __future__ import annotations

import math

import numpy as np

from .. import gradkit as gk

__all__ = ["DB_RANGE", "amp_coeff", "unit_to_db", "db_to_unit",
           "unit_to_amp_np", "unit_to_power", "db_floor_value"]

DB_RANGE = 80.0


def amp_coeff(db_range: float = DB_RANGE) -> float:
    """K such that amplitude = exp(K * (v - 1))."""
    return db_range * math.log(10.0) / 40.0


def unit_to_db(v, db_range: float = DB_RANGE):
    return db_range * (np.asarray(v) - 1.0) / 2.0


def db_to_unit(db, db_range: float = DB_RANGE):
    return 2.0 * np.asarray(db) / db_range + 1.0


def db_floor_value() -> float:
    return -1.0


def unit_to_amp_np(v, db_range: float = DB_RANGE) -> np.ndarray:
    return np.exp(amp_coeff(db_range) * (np.asarray(v) - 1.0))


def unit_to_power(x, db_range: float = DB_RANGE):
    """Linear power exp(2K (v - 1)) of a grid tensor, differentiable."""
    k2 = 2.0 * amp_coeff(db_range)
    return gk.exp(gk.mul(gk.add(gk.as_tensor(x), -1.0), k2))
