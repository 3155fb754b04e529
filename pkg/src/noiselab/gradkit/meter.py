"""Cost accounting: model calls, tape-owned bytes, per-step wall times.

One meter may be active per thread.  Tapes charge bytes to the active
meter when nodes are recorded and return them on release, so
``peak_bytes`` tracks the high-water mark of memory the autodiff
machinery itself retains.  Eager intermediates are deliberately not
charged; they are transient and not owned by any tape.
"""

from __future__ import annotations

import threading
from typing import Callable

__all__ = ["CostMeter", "MeterError", "meter_scope", "active_meter"]


class MeterError(Exception):
    pass


class CostMeter:
    """Mutable counters for one measured run."""

    __slots__ = ("model_calls", "peak_bytes", "cur_bytes", "step_wall_times")

    def __init__(self):
        self.model_calls = 0
        self.peak_bytes = 0
        self.cur_bytes = 0
        self.step_wall_times: list[float] = []

    def reset(self) -> None:
        self.model_calls = 0
        self.peak_bytes = 0
        self.cur_bytes = 0
        self.step_wall_times = []

    # -- charging (called by Tape) --------------------------------------
    def _alloc(self, nbytes: int) -> None:
        self.cur_bytes += int(nbytes)
        if self.cur_bytes > self.peak_bytes:
            self.peak_bytes = self.cur_bytes

    def _free(self, nbytes: int) -> None:
        self.cur_bytes -= int(nbytes)
        if self.cur_bytes < 0:
            # released more than charged; clamp so reuse stays sane
            self.cur_bytes = 0

    # -- counters ---------------------------------------------------------
    def count_model_call(self, n: int = 1) -> None:
        self.model_calls += int(n)

    def record_step_time(self, seconds: float) -> None:
        self.step_wall_times.append(float(seconds))

    def summary(self) -> dict:
        times = self.step_wall_times
        return {
            "model_calls": self.model_calls,
            "peak_bytes": self.peak_bytes,
            "mean_step_seconds": (sum(times) / len(times)) if times else 0.0,
            "n_steps_timed": len(times),
        }

    def __repr__(self) -> str:
        return (f"CostMeter(model_calls={self.model_calls}, "
                f"peak_bytes={self.peak_bytes}, "
                f"steps_timed={len(self.step_wall_times)})")


_state = threading.local()


def active_meter() -> CostMeter | None:
    return getattr(_state, "meter", None)


class _Scope:
    def __init__(self, meter: CostMeter):
        self.meter = meter

    def __enter__(self) -> CostMeter:
        if getattr(_state, "meter", None) is not None:
            raise MeterError("a meter scope is already active on this thread")
        _state.meter = self.meter
        return self.meter

    def __exit__(self, exc_type, exc, tb) -> None:
        _state.meter = None


def meter_scope(meter: CostMeter, body: Callable | None = None):
    """Activate ``meter`` for the current thread.

    With ``body`` given, runs it inside the scope and returns the meter.
    Without, returns a context manager.  Nesting scopes is an error:
    exactly one meter may be active so byte charges are unambiguous.
    """
    scope = _Scope(meter)
    if body is None:
        return scope
    with scope:
        body()
    return meter
