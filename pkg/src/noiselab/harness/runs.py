"""Task construction, method dispatch, and per-run artifact writing.

The task registry turns a config into concrete steering objectives
(feature targets, region masks, loop ties); the method registry turns a
config into one executed run per seed and reduces it to a ReportRow plus
on-disk artifacts: the resolved config, the output spectrogram, the
optimization record when one exists, and feature-overlay CSVs.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import gradkit as gk
from ..baselines import (DoodlConfig, GuidanceSpec, ddim_invert,
                         doodl_optimize, freedom_sample, gg_sample,
                         multidiffusion_sample, naive_invert,
                         naive_mask_sample)
from ..diffcore import Conditioning, SamplerSpec, sample, uniform_steps
from ..ditto import DittoConfig, OptRunRecord, convergence_stats, ditto_optimize
from ..features import (ControlTask, RegionMask, batched_multi_loss, chroma,
                        inpaint_mask, intensity_curve, loop_mask,
                        melody_accuracy, mfcc_ss, outpaint_mask,
                        ref_free_loop_regions, structure_target_from_diagram,
                        structure_transfer_target)
from ..toymodel import default_styles, synthesize_clip
from .config import ConfigError, RunConfig
from .seam import seam_metric
from .tensorio import load_tensor, save_tensor

__all__ = ["ReportRow", "TaskSetup", "build_tasks", "execute_seed",
           "execute_config", "run_dir_name", "save_record", "load_record",
           "LOSS_UNITS"]

LOSS_UNITS = {
    "intensity": "dB^2",
    "intensity-corr": "neg-corr",
    "melody": "nats",
    "structure": "mse",
    "structure-transfer": "mse",
    "inversion": "mse",
    "outpaint": "mse",
    "inpaint": "mse",
    "loop": "mse",
    "refloop": "mse",
    "multi": "weighted-sum",
}


# ---------------------------------------------------------------------------
# report rows

_OPTIONAL_METRICS = ("melody_acc", "seam", "ms2c", "mos_seconds")


@dataclass(frozen=True)
class ReportRow:
    """One (task, method, seed) outcome with its cost counters.

    Metrics that do not apply stay None: melody accuracy outside melody
    tasks, the seam score outside painting tasks, MS2C without a loss
    threshold, MOS for methods that run no optimizer.
    """

    task: str
    method: str
    seed: int
    final_loss: float
    loss_units: str
    melody_acc: float | None = None
    seam: float | None = None
    ms2c: float | None = None
    ms2c_clamped: bool = False
    mos_seconds: float | None = None
    peak_bytes: int = 0
    model_calls: int = 0
    wall_seconds: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.final_loss):
            raise ValueError(f"final loss must be finite, got {self.final_loss}")
        for name in _OPTIONAL_METRICS:
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"{name} must be finite when set, got {v}")
        if self.peak_bytes < 0 or self.model_calls < 0 or self.wall_seconds < 0:
            raise ValueError("cost counters must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReportRow":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ReportRow":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# task construction

@dataclass
class TaskSetup:
    """Concrete objectives plus the side material metrics need later."""

    tasks: list[ControlTask]
    units: str
    ref_values: np.ndarray | None = None     # [F, N_ref] reference grid
    mask: RegionMask | None = None
    melody_classes: np.ndarray | None = None
    intensity_target: np.ndarray | None = None
    ss_target: np.ndarray | None = None
    boundaries: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)


def _needs_reference(config: RunConfig) -> bool:
    return not (config.task == "refloop"
                or (config.task == "structure"
                    and config.target_source == "diagram"))


def _reference_material(config: RunConfig, f_bins: int, n_frames: int):
    """Reference grid plus ground-truth features when they are knowable."""
    if config.target_source == "file":
        ref = load_tensor(config.target_path)
        if ref.ndim != 2 or ref.shape[0] != f_bins:
            raise ConfigError(f"target file must hold an [{f_bins}, N] grid, "
                              f"got shape {ref.shape}")
        ref = ref.astype(np.float64)
        curve = intensity_curve(gk.constant(ref)).values
        classes = np.argmax(chroma(gk.constant(ref)).values, axis=0) + 1
        return ref, curve, classes, None
    clip = synthesize_clip(config.target_seed, config.target_style,
                           default_styles(), f_bins=f_bins, n_frames=n_frames)
    return clip.values, clip.gt_intensity, clip.gt_melody, clip.gt_sections


def _region_edges(gen_frames: np.ndarray, n_frames: int) -> tuple[int, ...]:
    """Frames where pinned and free regions meet (seam candidates)."""
    pinned = np.zeros(n_frames, dtype=bool)
    pinned[gen_frames] = True
    flips = np.nonzero(pinned[1:] != pinned[:-1])[0] + 1
    return tuple(int(i) for i in flips)


def build_tasks(config: RunConfig, f_bins: int, n_frames: int) -> TaskSetup:
    """Turn a validated config into concrete control objectives."""
    task = config.task
    units = LOSS_UNITS[task]
    ref = curve = classes = sections = None
    if _needs_reference(config):
        ref, curve, classes, sections = _reference_material(
            config, f_bins, n_frames)

    def _full_length(what: str):
        if ref.shape[1] != n_frames:
            raise ConfigError(f"{what} needs a {n_frames}-frame reference, "
                              f"got {ref.shape[1]} frames")

    if task in ("outpaint", "inpaint", "loop"):
        if task == "outpaint":
            mask = outpaint_mask(ref_len=ref.shape[1], overlap=config.overlap)
        elif task == "inpaint":
            _full_length("inpainting")
            mask = inpaint_mask(n_frames, gap=config.gap, flank=config.flank)
        else:
            mask = loop_mask(ref_len=ref.shape[1], gen_len=n_frames,
                             overlap=config.overlap)
        return TaskSetup(
            tasks=[ControlTask("masked_l2", target=ref, mask=mask)],
            units=units, ref_values=ref, mask=mask,
            boundaries=_region_edges(mask.gen_frames, n_frames))

    if task == "refloop":
        regions = ref_free_loop_regions(n_frames, period=config.period,
                                        overlap=config.overlap)
        edges = sorted({config.period,
                        min(config.period + config.overlap, n_frames - 1)})
        return TaskSetup(tasks=[ControlTask("self_loop", regions=regions)],
                         units=units, boundaries=tuple(edges))

    if task in ("intensity", "intensity-corr"):
        _full_length("an intensity target")
        feature = "intensity" if task == "intensity" else "intensity_corr"
        return TaskSetup(tasks=[ControlTask(feature, target=curve)],
                         units=units, ref_values=ref, intensity_target=curve)

    if task == "melody":
        _full_length("a melody target")
        return TaskSetup(tasks=[ControlTask("melody", target=classes)],
                         units=units, ref_values=ref, melody_classes=classes)

    if task in ("structure", "structure-transfer"):
        if task == "structure" and config.target_source == "diagram":
            target = structure_target_from_diagram(config.diagram, n_frames)
        elif task == "structure" and sections is not None:
            target = structure_target_from_diagram(sections, n_frames)
        else:
            target = structure_transfer_target(ref)
        return TaskSetup(tasks=[ControlTask("structure", target=target)],
                         units=units, ref_values=ref, ss_target=target)

    if task == "inversion":
        _full_length("inversion")
        return TaskSetup(tasks=[ControlTask("inversion", target=ref)],
                         units=units, ref_values=ref)

    # multi: loudness envelope and melody steered together
    _full_length("a multi-feature target")
    return TaskSetup(
        tasks=[ControlTask("intensity", target=curve),
               ControlTask("melody", target=classes)],
        units=units, ref_values=ref, melody_classes=classes,
        intensity_target=curve)


# ---------------------------------------------------------------------------
# method dispatch

def _sampler_spec(config: RunConfig, n_train_steps: int) -> SamplerSpec:
    return SamplerSpec(kind=config.resolved_sampler(),
                       steps=uniform_steps(n_train_steps, config.steps),
                       cfg_scale=config.cfg_scale,
                       use_dynamic_threshold=config.dynamic_threshold,
                       edict_mix=config.edict_mix)


def _per_sample_losses(x_out: np.ndarray, tasks) -> np.ndarray:
    _, per_sample = batched_multi_loss(gk.constant(x_out), tasks)
    return np.asarray(per_sample, dtype=np.float64)


def execute_seed(model, schedule, config: RunConfig, setup: TaskSetup,
                 seed: int) -> tuple[ReportRow, np.ndarray, OptRunRecord | None]:
    """Run one method on one seed; returns (row, decoded batch, record)."""
    config = config.resolved()
    arch = model.arch
    rng = np.random.default_rng(seed)
    shape = (config.batch, 1, arch.f_bins, arch.n_frames)
    x_init = rng.standard_normal(shape).astype(model.dtype)
    cond = Conditioning(config.style) if config.style is not None else None
    spec = _sampler_spec(config, arch.n_train_steps)
    sampler_rng = None if spec.deterministic and config.method not in (
        "naive", "md", "naive-inv") else rng

    record: OptRunRecord | None = None
    meter = gk.CostMeter()
    t0 = time.perf_counter()
    with gk.meter_scope(meter):
        if config.method == "ditto":
            record = ditto_optimize(
                model, schedule, spec, setup.tasks, x_init, cond,
                DittoConfig(k_max=config.k_max, lr=config.lr, tau=config.tau),
                meter=meter)
            x_out = record.x_best
        elif config.method == "doodl":
            record = doodl_optimize(
                model, schedule, spec, setup.tasks, x_init, cond=cond,
                config=DoodlConfig(k_max=config.k_max, lr=config.lr,
                                   tau=config.tau, renorm=config.renorm,
                                   noise_gamma=config.noise_gamma,
                                   backprop_mode=config.backprop_mode),
                rng=rng, meter=meter)
            x_out = record.x_best
        elif config.method == "freedom":
            guide = GuidanceSpec(eta_rule="norm",
                                 base_scale=config.guidance_scale)
            x_out = freedom_sample(model, x_init, cond, spec, schedule,
                                   setup.tasks, rng=sampler_rng, guide=guide)
        elif config.method == "gg":
            guide = GuidanceSpec(eta_rule="fixed",
                                 base_scale=config.guidance_scale,
                                 data_consistency=True)
            x_out = gg_sample(model, x_init, cond, spec, schedule,
                              setup.tasks, rng=sampler_rng, guide=guide)
        elif config.method == "naive":
            x_out = naive_mask_sample(model, schedule, spec, setup.ref_values,
                                      setup.mask, x_init, cond=cond, rng=rng)
        elif config.method == "md":
            x_out = multidiffusion_sample(
                model, schedule, spec, setup.ref_values, setup.mask, x_init,
                cond=cond, rng=rng, stop_fraction=config.stop_fraction)
        elif config.method == "plain":
            x_out = sample(model, x_init, cond, spec, schedule,
                           rng=sampler_rng).values
        elif config.method in ("ddim-inv", "naive-inv"):
            ref = np.broadcast_to(
                setup.ref_values.astype(model.dtype),
                shape).copy()
            if config.method == "ddim-inv":
                x_top = ddim_invert(model, ref, cond, spec, schedule)
            else:
                x_top = naive_invert(ref, int(spec.steps[0]), schedule, rng)
            x_out = sample(model, x_top, cond, spec, schedule).values
        else:
            raise ConfigError(f"unknown method '{config.method}'")
    wall = time.perf_counter() - t0

    if record is not None:
        per_sample = record.final_losses
    else:
        per_sample = _per_sample_losses(x_out, setup.tasks)

    melody_acc = None
    if setup.melody_classes is not None:
        melody_acc = float(np.mean([
            melody_accuracy(x_out[b, 0], setup.melody_classes)
            for b in range(x_out.shape[0])]))

    seam = None
    if setup.boundaries:
        with np.errstate(over="ignore", invalid="ignore"):
            seam = float(np.mean([
                seam_metric(x_out[b, 0], edge)
                for b in range(x_out.shape[0]) for edge in setup.boundaries]))
        if not math.isfinite(seam):
            seam = None  # undefined when the render saturates the dB features

    ms2c = mos = None
    clamped = False
    if record is not None:
        times = record.step_wall_times
        mos = float(np.mean(times)) if times else 0.0
        if record.tau is not None:
            stats = convergence_stats(record)
            ms2c = stats.mean_steps_to_converge
            clamped = stats.clamped

    row = ReportRow(task=config.task, method=config.method, seed=int(seed),
                    final_loss=float(np.mean(per_sample)),
                    loss_units=setup.units, melody_acc=melody_acc, seam=seam,
                    ms2c=ms2c, ms2c_clamped=clamped, mos_seconds=mos,
                    peak_bytes=int(meter.peak_bytes),
                    model_calls=int(meter.model_calls),
                    wall_seconds=float(wall))
    return row, np.asarray(x_out), record


# ---------------------------------------------------------------------------
# artifacts

def run_dir_name(config: RunConfig, seed: int) -> str:
    return f"{config.task}_{config.method}_seed{seed}"


def save_record(out_dir: Path, record: OptRunRecord) -> None:
    out_dir = Path(out_dir)
    save_tensor(out_dir / "losses.nlt", record.losses)
    save_tensor(out_dir / "x_best.nlt", record.x_best)
    save_tensor(out_dir / "noise_best.nlt", record.noise_best)
    scalars = {
        "best_step": record.best_step.tolist(),
        "first_hit": record.first_hit.tolist(),
        "steps": record.steps,
        "converged": [bool(c) for c in record.converged],
        "tau": record.tau,
        "model_calls": record.model_calls,
        "peak_bytes": record.peak_bytes,
        "step_wall_times": list(record.step_wall_times),
        "meta": record.meta,
    }
    (out_dir / "record.json").write_text(
        json.dumps(scalars, indent=2, sort_keys=True) + "\n")


def load_record(out_dir: Path) -> OptRunRecord:
    out_dir = Path(out_dir)
    scalars = json.loads((out_dir / "record.json").read_text())
    return OptRunRecord(
        losses=load_tensor(out_dir / "losses.nlt"),
        x_best=load_tensor(out_dir / "x_best.nlt"),
        noise_best=load_tensor(out_dir / "noise_best.nlt"),
        best_step=np.asarray(scalars["best_step"], dtype=np.int64),
        first_hit=np.asarray(scalars["first_hit"], dtype=np.int64),
        steps=int(scalars["steps"]),
        converged=np.asarray(scalars["converged"], dtype=bool),
        tau=scalars["tau"],
        model_calls=int(scalars["model_calls"]),
        peak_bytes=int(scalars["peak_bytes"]),
        step_wall_times=[float(t) for t in scalars["step_wall_times"]],
        meta=scalars["meta"])


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_overlays(out_dir: Path, setup: TaskSetup, grid: np.ndarray) -> None:
    """Feature overlays of the first decoded sample, as plot-ready CSVs.

    Saturated renders yield inf/nan entries rather than aborting the run.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        _write_overlay_files(out_dir, setup, grid)


def _write_overlay_files(out_dir: Path, setup: TaskSetup,
                         grid: np.ndarray) -> None:
    curve = intensity_curve(gk.constant(grid)).values
    if setup.intensity_target is not None:
        _write_csv(out_dir / "intensity.csv",
                   ["frame", "curve_db", "target_db"],
                   ((i, float(curve[i]), float(setup.intensity_target[i]))
                    for i in range(curve.size)))
    else:
        _write_csv(out_dir / "intensity.csv", ["frame", "curve_db"],
                   ((i, float(curve[i])) for i in range(curve.size)))
    if setup.melody_classes is not None:
        mass = chroma(gk.constant(grid)).values
        predicted = np.argmax(mass, axis=0) + 1
        header = ["frame"] + [f"mass_{c}" for c in range(1, 13)] \
            + ["predicted", "target"]
        _write_csv(out_dir / "chroma.csv", header,
                   ([i] + [float(m) for m in mass[:, i]]
                    + [int(predicted[i]), int(setup.melody_classes[i])]
                    for i in range(mass.shape[1])))
    if setup.ss_target is not None:
        ss = mfcc_ss(gk.constant(grid)).values
        _write_csv(out_dir / "ss.csv",
                   [f"f{j}" for j in range(ss.shape[1])],
                   ([float(v) for v in row] for row in ss))


def write_run_artifacts(run_dir: Path, config: RunConfig, row: ReportRow,
                        setup: TaskSetup, x_out: np.ndarray,
                        record: OptRunRecord | None) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.resolved().write(run_dir / "config.json")
    (run_dir / "row.json").write_text(row.to_json() + "\n")
    save_tensor(run_dir / "spectrogram.nlt", x_out[0, 0])
    _write_overlays(run_dir, setup, x_out[0, 0])
    if record is not None:
        save_record(run_dir, record)


def execute_config(model, schedule, config: RunConfig,
                   write: bool = True) -> list[ReportRow]:
    """Run every seed of a config; optionally write per-run artifacts."""
    config.validate()
    arch = model.arch
    setup = build_tasks(config, arch.f_bins, arch.n_frames)
    rows = []
    for seed in config.seeds:
        row, x_out, record = execute_seed(model, schedule, config, setup, seed)
        if write:
            write_run_artifacts(Path(config.out_dir) /
                                run_dir_name(config, seed),
                                config, row, setup, x_out, record)
        rows.append(row)
    return rows
