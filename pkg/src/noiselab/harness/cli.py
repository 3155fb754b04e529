"""Command-line entry point: synth, train, run, bench, studies, report.

Every subcommand validates its full configuration before touching the
filesystem, so a bad invocation exits nonzero without leaving partial
artifacts.  Run directories receive the resolved config, the report row,
the output spectrogram, feature-overlay CSVs, and (for optimizing
methods) the optimization record.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from ..diffcore import build_cosine_schedule
from ..toymodel import (CheckpointError, Denoiser, DenoiserArch, TrainConfig,
                        load_checkpoint, save_checkpoint, synthesize_dataset,
                        train_denoiser)
from .bench import run_bench, write_bench
from .config import ConfigError, RunConfig
from .report import write_report
from .runs import execute_config
from .studies import reuse_study, variance_study, write_study
from .tensorio import TensorFormatError, save_tensor

__all__ = ["main"]


def _build_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    return cfg.with_flags(
        task=getattr(args, "task", None),
        method=getattr(args, "method", None),
        seed=getattr(args, "seed", None),
        steps=getattr(args, "steps", None),
        lr=getattr(args, "lr", None),
        k_max=getattr(args, "k_max", None),
        tau=getattr(args, "tau", None),
        cfg_scale=getattr(args, "cfg_scale", None),
        checkpoint=getattr(args, "checkpoint", None),
        out_dir=getattr(args, "out", None))


def _load_model(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("a model checkpoint is required (--checkpoint "
                          "or the 'checkpoint' config field)")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    model, schedule, _ = load_checkpoint(path)
    return model, schedule


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    out = Path(args.out)
    clips = synthesize_dataset(args.n_clips, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    values = np.stack([c.values for c in clips])
    save_tensor(out / "dataset.nlt", values)
    save_tensor(out / "melody.nlt",
                np.stack([c.gt_melody for c in clips]).astype(np.int64))
    save_tensor(out / "intensity.nlt",
                np.stack([c.gt_intensity for c in clips]))
    digest = hashlib.sha256((out / "dataset.nlt").read_bytes()).hexdigest()
    manifest = {
        "n_clips": args.n_clips,
        "seed": args.seed,
        "f_bins": int(values.shape[1]),
        "n_frames": int(values.shape[2]),
        "styles": [c.style for c in clips],
        "sections": [c.gt_sections for c in clips],
        "sha256": digest,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.n_clips} clips to {out} (sha256 {digest[:16]}...)")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    clips = synthesize_dataset(args.n_clips, seed=args.seed)
    arch = DenoiserArch()
    model = Denoiser(arch, np.random.default_rng(args.seed),
                     dtype=np.dtype(args.dtype))
    schedule = build_cosine_schedule(arch.n_train_steps)
    train_config = TrainConfig(epochs=args.epochs, seed=args.seed,
                               batch_size=min(16, args.n_clips),
                               log_every=args.log_every)
    losses = train_denoiser(model, clips, schedule, train_config)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, schedule,
                    meta={"epochs": args.epochs, "n_clips": args.n_clips,
                          "seed": args.seed, "final_loss": losses[-1]})
    print(f"trained {args.epochs} epochs; final loss {losses[-1]:.6f}; "
          f"checkpoint at {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _build_config(args).validate()
    model, schedule = _load_model(cfg)
    rows = execute_config(model, schedule, cfg)
    for row in rows:
        extras = "".join(
            f"  {k}={v:.4g}" for k, v in
            (("melody_acc", row.melody_acc), ("seam", row.seam))
            if v is not None)
        print(f"{row.task} {row.method} seed={row.seed} "
              f"loss={row.final_loss:.6g} {row.loss_units}"
              f"{extras}  calls={row.model_calls}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_bench(args) -> int:
    cfg = _build_config(args)
    cfg.validate()
    model, schedule = _load_model(cfg)
    table = run_bench(model, schedule, cfg)
    path = write_bench(table, cfg.out_dir)
    for entry in table["grids"]:
        r = entry["doodl_over_ditto"]
        print(f"T={entry['steps']}: doodl/ditto  calls={r['model_calls']:.2f}"
              f"  mos={r['mos_seconds']:.2f}  peak_bytes={r['peak_bytes']:.2f}")
    print(f"bench table at {path}")
    return 0


def cmd_variance_study(args) -> int:
    cfg = _build_config(args)
    model, schedule = _load_model(cfg)
    report = variance_study(model, schedule, cfg, n_batches=args.n_batches,
                            batch=args.batch, seed=args.seed or 0)
    path = write_study(report, cfg.out_dir, "variance_study")
    for name, entry in report["features"].items():
        print(f"{name}: var ratio {entry['variance_ratio']:.3f}  "
              f"p={entry['p_value']:.3g}")
    print(f"study at {path}")
    return 0


def cmd_reuse_study(args) -> int:
    cfg = _build_config(args)
    model, schedule = _load_model(cfg)
    report = reuse_study(model, schedule, cfg, batch=args.batch,
                         seed=args.seed or 0)
    path = write_study(report, cfg.out_dir, "reuse_study")
    for name, entry in report["features"].items():
        print(f"{name}: " + "  ".join(
            f"{k}={entry[k]:.4g}" for k in
            ("ddpm_fixed", "freedom_fixed", "ddpm_random", "freedom_random")))
    print(f"study at {path}")
    return 0


def cmd_report(args) -> int:
    csv_path, json_path = write_report(args.out)
    print(f"report at {csv_path} / {json_path}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--seed", type=int, help="single seed override")
    p.add_argument("--out", help="output directory")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", help="task id")
    p.add_argument("--method", help="method id")
    p.add_argument("--steps", type=int, help="sampler grid size")
    p.add_argument("--lr", type=float, help="optimizer learning rate")
    p.add_argument("--k-max", type=int, dest="k_max",
                   help="optimization step budget")
    p.add_argument("--tau", type=float, help="convergence loss threshold")
    p.add_argument("--cfg-scale", type=float, dest="cfg_scale",
                   help="classifier-free guidance scale")
    p.add_argument("--checkpoint", help="model checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noiselab",
        description="Spectrogram diffusion control workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic clip dataset")
    _add_common(p)
    p.add_argument("--n-clips", type=int, default=64, dest="n_clips")
    p.set_defaults(func=cmd_synth, out="data", seed=0)

    p = sub.add_parser("train", help="train the toy denoiser")
    _add_common(p)
    p.add_argument("--n-clips", type=int, default=64, dest="n_clips")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dtype", default="float32",
                   choices=("float32", "float64"))
    p.add_argument("--log-every", type=int, default=0, dest="log_every")
    p.set_defaults(func=cmd_train, out="checkpoints/toy.ckpt", seed=0)

    p = sub.add_parser("run", help="run one method on one task")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="optimizer efficiency comparison")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("variance-study",
                       help="shared vs per-sample initial noise")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--n-batches", type=int, default=100, dest="n_batches")
    p.add_argument("--batch", type=int, default=8)
    p.set_defaults(func=cmd_variance_study)

    p = sub.add_parser("reuse-study",
                       help="stochastic re-decoding of optimized noise")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--batch", type=int, default=10)
    p.set_defaults(func=cmd_reuse_study)

    p = sub.add_parser("report", help="aggregate run rows under a directory")
    p.add_argument("--out", default="runs",
                   help="directory holding run outputs")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, TensorFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
