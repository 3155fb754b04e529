"""Noise-space optimization: the loop, its optimizer, reuse, and stats."""

from .adam import AdamState, adam_update
from .loop import DittoConfig, OptimizerDiverged, OptRunRecord, ditto_optimize
from .reuse import reuse_sample
from .stats import ConvergenceStats, convergence_stats

__all__ = [
    "AdamState", "adam_update",
    "DittoConfig", "OptRunRecord", "OptimizerDiverged", "ditto_optimize",
    "reuse_sample",
    "ConvergenceStats", "convergence_stats",
]
