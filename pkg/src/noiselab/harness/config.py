"""Run configuration: one flat record per run, JSON on disk, flags on top.

A config names a task, a method, a checkpoint, the sampler grid, and the
knobs of whichever optimizer or guidance rule the method uses.  Validation
happens before any artifact is written, so a bad config never leaves a
half-populated output directory behind.  Every executed run writes its
fully resolved config next to its outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "TASKS", "METHODS", "MASKED_TASKS"]


class ConfigError(ValueError):
    """Config that names unknown ids, conflicting knobs, or missing inputs."""


TASKS = ("outpaint", "inpaint", "loop", "refloop", "intensity",
         "intensity-corr", "melody", "structure", "structure-transfer",
         "inversion", "multi")

METHODS = ("ditto", "doodl", "freedom", "gg", "naive", "md", "plain",
           "ddim-inv", "naive-inv")

# tasks that pin a frame region to a reference clip
MASKED_TASKS = frozenset({"outpaint", "inpaint", "loop"})

# methods that only make sense when a region mask exists
_MASK_ONLY_METHODS = frozenset({"naive", "md", "gg"})
_INVERSION_ONLY_METHODS = frozenset({"ddim-inv", "naive-inv"})

# tasks whose optimization budget doubles by default
_LONG_TASKS = frozenset({"melody", "structure", "structure-transfer"})

_TARGET_SOURCES = ("generated", "file", "diagram")


@dataclass(frozen=True)
class RunConfig:
    task: str = "intensity"
    method: str = "ditto"
    checkpoint: str | None = None
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    batch: int = 1

    # sampler
    sampler: str | None = None        # None -> edict for doodl, ddim otherwise
    steps: int = 20
    cfg_scale: float = 3.0
    style: int | None = 0
    edict_mix: float = 0.83
    # clamping the per-step clean estimate is what keeps 1000-level grids
    # bounded; without it the first transition amplifies the model residual
    # by 1/sqrt(alpha_bar[top]) ~ 2e4 (edict ignores it: clamps don't invert)
    dynamic_threshold: bool = True

    # noise-space optimization
    k_max: int | None = None          # None -> 150 on melody/structure, 70 else
    lr: float = 5e-3
    tau: float | None = None
    backprop_mode: str = "checkpointed"
    renorm: bool = True
    noise_gamma: float = 0.0

    # per-step guidance
    guidance_scale: float | None = None   # None -> 0.3 freedom, 0.1 gg

    # masking
    stop_fraction: float = 1.0
    overlap: int = 42
    gap: int = 42
    flank: int = 21
    period: int = 64

    # target material
    target_source: str = "generated"
    target_path: str | None = None
    target_style: int = 1
    target_seed: int = 1234
    diagram: str = "ABA"

    # ------------------------------------------------------------------
    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task '{self.task}'; expected one of "
                              f"{', '.join(TASKS)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method '{self.method}'; expected one "
                              f"of {', '.join(METHODS)}")
        if self.method in _MASK_ONLY_METHODS and self.task not in MASKED_TASKS:
            raise ConfigError(
                f"method '{self.method}' needs a region mask; task "
                f"'{self.task}' has none (masked tasks: "
                f"{', '.join(sorted(MASKED_TASKS))})")
        if self.method in _INVERSION_ONLY_METHODS and self.task != "inversion":
            raise ConfigError(f"method '{self.method}' only applies to the "
                              "inversion task")
        if self.sampler is not None and self.sampler not in ("ddpm", "ddim",
                                                             "edict"):
            raise ConfigError(f"unknown sampler '{self.sampler}'")
        if self.method == "doodl" and self.sampler not in (None, "edict"):
            raise ConfigError("doodl runs on the coupled invertible sampler; "
                              "set sampler to 'edict' or leave it unset")
        if self.method in ("freedom", "gg", "naive", "md") \
                and self.sampler == "edict":
            raise ConfigError(f"method '{self.method}' needs a ddpm or ddim "
                              "sampler")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.k_max is not None and self.k_max < 1:
            raise ConfigError("k_max must be at least 1 when set")
        if self.tau is not None and self.tau <= 0:
            raise ConfigError("tau must be positive when set")
        if self.cfg_scale != 1.0 and self.style is None:
            raise ConfigError("classifier-free guidance (cfg_scale != 1) "
                              "needs a style to condition on")
        if self.guidance_scale is not None and self.guidance_scale < 0:
            raise ConfigError("guidance_scale must be non-negative")
        if not 0.0 <= self.stop_fraction <= 1.0:
            raise ConfigError("stop_fraction must lie in [0, 1]")
        if self.target_source not in _TARGET_SOURCES:
            raise ConfigError(f"unknown target source '{self.target_source}'")
        if self.target_source == "file" and not self.target_path:
            raise ConfigError("target_source 'file' needs target_path")
        if self.target_source == "diagram" and self.task != "structure":
            raise ConfigError("target_source 'diagram' only applies to the "
                              "structure task")
        return self

    # -- resolution ------------------------------------------------------
    def resolved_sampler(self) -> str:
        if self.sampler is not None:
            return self.sampler
        return "edict" if self.method == "doodl" else "ddim"

    def resolved_k_max(self) -> int:
        if self.k_max is not None:
            return self.k_max
        return 150 if self.task in _LONG_TASKS else 70

    def resolved_guidance_scale(self) -> float:
        if self.guidance_scale is not None:
            return self.guidance_scale
        return 0.1 if self.method == "gg" else 0.3

    def resolved(self) -> "RunConfig":
        """Copy with every None default filled in."""
        return replace(self, sampler=self.resolved_sampler(),
                       k_max=self.resolved_k_max(),
                       guidance_scale=self.resolved_guidance_scale())

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        if "seeds" in d:
            d = dict(d, seeds=tuple(d["seeds"]))
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw)

    def with_flags(self, **overrides) -> "RunConfig":
        """Apply CLI flag values; None means the flag was not given."""
        given = {k: v for k, v in overrides.items() if v is not None}
        if "seed" in given:
            given["seeds"] = (int(given.pop("seed")),)
        return replace(self, **given)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True) + "\n")
