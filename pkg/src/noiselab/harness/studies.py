"""Population studies: what an optimized or shared initial noise carries.

The variance study quantifies how much of a batch's feature spread is
attributable to the initial noise: batches decoded from one shared draw
(prompts still random) are compared against batches with per-sample
draws, via the intra-batch variance of each extracted feature and a
rank-sum test across many paired batches.

The reuse study re-decodes an optimized initial noise with a stochastic
sampler — same prompt or a fresh one, with and without per-step guidance
— and reports the mean task loss of each combination.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from .. import gradkit as gk
from ..baselines import GuidanceSpec
from ..diffcore import Conditioning, SamplerSpec, sample, uniform_steps
from ..ditto import DittoConfig, ditto_optimize, reuse_sample
from ..features import batched_multi_loss, chroma, intensity_curve, mfcc_ss
from .config import RunConfig
from .runs import build_tasks

__all__ = ["variance_study", "reuse_study", "write_study"]

_FEATURES = ("intensity", "chroma", "structure")


def _extract(grid: np.ndarray) -> dict[str, np.ndarray]:
    g = gk.constant(grid)
    return {"intensity": intensity_curve(g).values,
            "chroma": chroma(g).values,
            "structure": mfcc_ss(g).values}


def _intra_batch_variance(feature_stack: list[np.ndarray]) -> float:
    """Across-sample variance of each feature entry, averaged."""
    return float(np.mean(np.var(np.stack(feature_stack), axis=0)))


def variance_study(model, schedule, config: RunConfig, n_batches: int = 100,
                   batch: int = 8, seed: int = 0) -> dict:
    """Paired shared-noise vs per-sample-noise batches, rank-sum tested.

    Each pair shares its prompt draw; only the initial noise policy
    differs.  Lower intra-batch variance under shared noise means the
    starting point, not the prompt, pins the feature.
    """
    if batch < 2:
        raise ValueError("variance needs at least 2 samples per batch")
    if n_batches < 2:
        raise ValueError("need at least 2 batches per arm")
    arch = model.arch
    spec = SamplerSpec(kind="ddim",
                       steps=uniform_steps(arch.n_train_steps, config.steps),
                       cfg_scale=config.cfg_scale,
                       use_dynamic_threshold=config.dynamic_threshold)
    rng = np.random.default_rng(seed)
    shape = (1, 1, arch.f_bins, arch.n_frames)
    per_arm = {arm: {f: [] for f in _FEATURES} for arm in ("fixed", "random")}

    for _ in range(n_batches):
        styles = rng.integers(0, arch.n_styles, size=batch)
        shared = rng.standard_normal(shape).astype(model.dtype)
        for arm in ("fixed", "random"):
            stacks: dict[str, list[np.ndarray]] = {f: [] for f in _FEATURES}
            for i in range(batch):
                x0 = shared if arm == "fixed" \
                    else rng.standard_normal(shape).astype(model.dtype)
                out = sample(model, x0, Conditioning(int(styles[i])), spec,
                             schedule).values
                for name, arr in _extract(out[0, 0]).items():
                    stacks[name].append(arr)
            for name in _FEATURES:
                per_arm[arm][name].append(_intra_batch_variance(stacks[name]))

    report: dict = {"n_batches": n_batches, "batch": batch, "seed": seed,
                    "steps": config.steps, "cfg_scale": config.cfg_scale,
                    "features": {}}
    for name in _FEATURES:
        fixed = np.asarray(per_arm["fixed"][name])
        random_ = np.asarray(per_arm["random"][name])
        test = sstats.ranksums(fixed, random_, alternative="less")
        ratio = float(random_.mean() / fixed.mean()) if fixed.mean() > 0 \
            else None
        report["features"][name] = {
            "fixed_mean_var": float(fixed.mean()),
            "random_mean_var": float(random_.mean()),
            "variance_ratio": ratio,
            "rank_sum_statistic": float(test.statistic),
            "p_value": float(test.pvalue),
        }
    return report


def reuse_study(model, schedule, config: RunConfig,
                features=("intensity", "structure"), batch: int = 10,
                seed: int = 0) -> dict:
    """Optimize a noise per feature, then re-decode it stochastically.

    Four columns per feature: plain ancestral sampling vs per-step
    guidance, each under the optimization prompt and under fresh random
    prompts.  Values are mean task losses over ``batch`` decodes.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1")
    arch = model.arch
    rng = np.random.default_rng(seed)
    guide = GuidanceSpec(eta_rule="norm",
                         base_scale=config.resolved_guidance_scale())
    report: dict = {"batch": batch, "seed": seed, "features": {}}

    for task_id in features:
        cfg = replace(config, task=task_id, method="ditto", batch=1).resolved()
        cfg.validate()
        setup = build_tasks(cfg, arch.f_bins, arch.n_frames)
        opt_spec = SamplerSpec(
            kind="ddim", steps=uniform_steps(arch.n_train_steps, cfg.steps),
            cfg_scale=cfg.cfg_scale,
            use_dynamic_threshold=cfg.dynamic_threshold)
        x_init = rng.standard_normal(
            (1, 1, arch.f_bins, arch.n_frames)).astype(model.dtype)
        cond = Conditioning(cfg.style)
        record = ditto_optimize(model, schedule, opt_spec, setup.tasks,
                                x_init, cond,
                                DittoConfig(k_max=cfg.k_max, lr=cfg.lr))
        x_star = np.broadcast_to(
            record.noise_best,
            (batch,) + record.noise_best.shape[1:]).copy()
        # Ancestral sampling via the ddim step with the ddpm sigma rule:
        # identical law, but keeps the x0-threshold available (the bare
        # ddpm step has no threshold hook).
        ddpm_spec = replace(opt_spec, sigma_rule="ddpm")

        styles = rng.integers(0, arch.n_styles, size=batch)
        columns = {}
        for guided in (False, True):
            for prompt in ("fixed", "random"):
                losses = np.empty(batch)
                for i in range(batch):
                    c = cond if prompt == "fixed" \
                        else Conditioning(int(styles[i]))
                    out = reuse_sample(
                        model, schedule, ddpm_spec, x_star[i:i + 1], c, rng,
                        tasks=setup.tasks if guided else None,
                        guidance=guide if guided else None)
                    _, per = batched_multi_loss(gk.constant(out), setup.tasks)
                    losses[i] = per[0]
                key = f"{'freedom' if guided else 'ddpm'}_{prompt}"
                columns[key] = float(losses.mean())
        report["features"][task_id] = dict(
            columns, opt_final_loss=float(record.final_losses[0]))
    return report


def write_study(report: dict, out_dir, name: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path
