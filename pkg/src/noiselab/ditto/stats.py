"""Summary statistics over optimization runs: convergence speed and cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loop import OptRunRecord

__all__ = ["ConvergenceStats", "convergence_stats"]


@dataclass(frozen=True)
class ConvergenceStats:
    """Aggregate of one run (or pooled runs) against a loss threshold.

    ``mean_steps_to_converge`` charges every non-converged sample the full
    step budget, which biases the mean low whenever ``clamped`` is set; the
    flag travels with the number so reports cannot quietly drop it.
    """

    mean_steps_to_converge: float
    n_converged: int
    n_total: int
    clamped: bool                   # some samples never reached tau
    mean_opt_seconds: float         # wall time per optimization step
    model_calls: int
    peak_bytes: int

    @property
    def all_converged(self) -> bool:
        return self.n_converged == self.n_total


def convergence_stats(record: OptRunRecord,
                      k_max: int | None = None) -> ConvergenceStats:
    """Fold an optimization record into convergence/cost numbers.

    ``k_max`` defaults to the run's configured budget; non-converged
    samples count as ``k_max`` steps and set ``clamped``.
    """
    if record.tau is None:
        raise ValueError("record has no tau; convergence is undefined")
    budget = int(k_max if k_max is not None else record.meta["k_max"])
    hits = np.asarray(record.first_hit)
    steps = np.where(hits >= 0, hits, budget).astype(np.float64)
    times = record.step_wall_times
    return ConvergenceStats(
        mean_steps_to_converge=float(steps.mean()),
        n_converged=int((hits >= 0).sum()),
        n_total=int(hits.size),
        clamped=bool(np.any(hits < 0)),
        mean_opt_seconds=float(np.mean(times)) if times else 0.0,
        model_calls=int(record.model_calls),
        peak_bytes=int(record.peak_bytes),
    )
