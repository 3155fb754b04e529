"""Cost meter semantics: scoping, counters, byte accounting."""

from __future__ import annotations

import numpy as np
import pytest

import noiselab.gradkit as gk


def test_empty_body_measures_zero():
    meter = gk.meter_scope(gk.CostMeter(), lambda: None)
    assert meter.peak_bytes == 0
    assert meter.model_calls == 0
    assert meter.step_wall_times == []


def test_nested_scopes_rejected():
    outer = gk.CostMeter()
    with gk.meter_scope(outer):
        with pytest.raises(gk.MeterError):
            with gk.meter_scope(gk.CostMeter()):
                pass
    # scope fully released afterwards
    with gk.meter_scope(outer):
        pass


def test_model_call_counter():
    meter = gk.CostMeter()
    meter.count_model_call()
    meter.count_model_call(3)
    assert meter.model_calls == 4
    meter.reset()
    assert meter.model_calls == 0


def test_bytes_charged_and_released():
    meter = gk.CostMeter()
    x = gk.tensor(np.ones((10, 10)), requires_grad=True)
    with gk.meter_scope(meter):
        with gk.Tape() as tape:
            y = gk.reduce_sum(gk.mul(x, x))
        assert meter.cur_bytes > 0
        gk.backward(y)  # releases the tape
    assert meter.cur_bytes == 0
    assert meter.peak_bytes >= 2 * x.values.nbytes  # leaf + product at minimum
    assert tape._released


def test_eager_work_is_not_charged():
    meter = gk.CostMeter()
    with gk.meter_scope(meter):
        a = gk.mul(np.ones((50, 50)), 3.0)
        gk.reduce_sum(a)
    assert meter.peak_bytes == 0


def test_step_times_recorded():
    meter = gk.CostMeter()
    meter.record_step_time(0.25)
    meter.record_step_time(0.75)
    assert meter.summary()["mean_step_seconds"] == pytest.approx(0.5)
    assert meter.summary()["n_steps_timed"] == 2
