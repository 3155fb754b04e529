"""Head-to-head efficiency comparison of the two noise-space optimizers.

Both optimizers run the same intensity task from identical initial noise
on two sampler grids; the table reports loss, steps-to-converge, seconds
per step, tape peak bytes, and model calls, plus the ratios of the
coupled-sampler method over the direct one.  With gradient checkpointing
on both sides the model-call ratio is exactly 2: the coupled sampler
spends two extra network evaluations per transition maintaining its
second chain.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .runs import build_tasks, execute_seed

__all__ = ["run_bench", "BENCH_GRIDS", "DEFAULT_TAU"]

BENCH_GRIDS = (20, 50)

# convergence threshold for the intensity loss: (2 dB)^2 of mean error
DEFAULT_TAU = 4.0

_RATIO_FIELDS = ("final_loss", "ms2c", "mos_seconds", "peak_bytes",
                 "model_calls")


def _mean(rows, name) -> float | None:
    vals = [getattr(r, name) for r in rows]
    if any(v is None for v in vals):
        return None
    return float(np.mean(vals))


def run_bench(model, schedule, config: RunConfig,
              grids=BENCH_GRIDS) -> dict:
    """DITTO vs DOODL on the intensity task at each sampler grid size."""
    base = replace(config, task="intensity",
                   tau=config.tau if config.tau is not None else DEFAULT_TAU,
                   k_max=config.k_max if config.k_max is not None else 10)
    base.validate()
    table: dict = {"tau": base.tau, "k_max": base.k_max,
                   "seeds": list(base.seeds), "grids": []}
    for n_steps in grids:
        entry: dict = {"steps": int(n_steps)}
        per_method = {}
        for method in ("ditto", "doodl"):
            cfg = replace(base, method=method, steps=int(n_steps),
                          sampler="edict" if method == "doodl" else "ddim")
            setup = build_tasks(cfg, model.arch.f_bins, model.arch.n_frames)
            rows = [execute_seed(model, schedule, cfg, setup, s)[0]
                    for s in cfg.seeds]
            per_method[method] = rows
            entry[method] = {name: _mean(rows, name) for name in
                             ("final_loss", "ms2c", "mos_seconds",
                              "peak_bytes", "model_calls", "wall_seconds")}
            entry[method]["clamped"] = bool(any(r.ms2c_clamped for r in rows))
        ratios = {}
        for name in _RATIO_FIELDS:
            a = entry["doodl"][name]
            b = entry["ditto"][name]
            ratios[name] = None if a is None or b is None or b == 0 \
                else float(a / b)
        entry["doodl_over_ditto"] = ratios
        table["grids"].append(entry)
    return table


def write_bench(table: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "bench.json"
    path.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return path
