"""Scan a results tree and aggregate rows by (task, method).

Every run directory leaves a ``row.json`` behind; the report walks the
tree, groups rows, and emits one line per (task, method) with mean and
standard deviation of each metric, in CSV and JSON with a deterministic
row order.  An empty tree yields an empty (header-only) report.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .runs import ReportRow

__all__ = ["collect_rows", "aggregate", "write_report"]

_METRICS = ("final_loss", "melody_acc", "seam", "ms2c", "mos_seconds",
            "peak_bytes", "model_calls", "wall_seconds")


def collect_rows(root) -> list[ReportRow]:
    root = Path(root)
    rows = []
    if not root.exists():
        return rows
    for path in sorted(root.rglob("row.json")):
        rows.append(ReportRow.from_json(path.read_text()))
    return rows


def _mean_std(values: list[float | None]) -> tuple[float | None, float | None]:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    arr = np.asarray(present, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(rows: list[ReportRow]) -> list[dict]:
    """One summary dict per (task, method), sorted by those keys."""
    groups: dict[tuple[str, str], list[ReportRow]] = {}
    for row in rows:
        groups.setdefault((row.task, row.method), []).append(row)
    out = []
    for (task, method) in sorted(groups):
        members = sorted(groups[(task, method)], key=lambda r: r.seed)
        entry: dict = {"task": task, "method": method,
                       "n_runs": len(members),
                       "seeds": [r.seed for r in members],
                       "loss_units": members[0].loss_units}
        for name in _METRICS:
            mean, std = _mean_std([getattr(r, name) for r in members])
            entry[f"{name}_mean"] = mean
            entry[f"{name}_std"] = std
        out.append(entry)
    return out


def write_report(root, out_dir=None) -> tuple[Path, Path]:
    """Aggregate ``root`` into report.csv + report.json in ``out_dir``."""
    out_dir = Path(out_dir) if out_dir is not None else Path(root)
    summary = aggregate(collect_rows(root))
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(summary, indent=2) + "\n")
    csv_path = out_dir / "report.csv"
    header = ["task", "method", "n_runs", "loss_units"]
    for name in _METRICS:
        header += [f"{name}_mean", f"{name}_std"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for entry in summary:
            writer.writerow([
                entry["task"], entry["method"], entry["n_runs"],
                entry["loss_units"],
                *(entry[f"{n}_{s}"] if entry[f"{n}_{s}"] is not None else ""
                  for n in _METRICS for s in ("mean", "std"))])
    return csv_path, json_path
