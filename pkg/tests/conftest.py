"""Shared fixtures: one trained toy denoiser per test session.

Training is fully seeded, so every session reproduces the same float32
weights.  Set NOISELAB_TEST_CKPT to a previously saved checkpoint to skip
the ~4 minute training pass during local iteration; the file must hold the
same recipe (192 clips, 30 epochs, seed 0) or threshold tests will drift.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from noiselab.diffcore import NoiseSchedule, build_cosine_schedule
from noiselab.toymodel import (Denoiser, DenoiserArch, TrainConfig,
                               load_checkpoint, save_checkpoint,
                               train_denoiser)
from noiselab.toymodel import synthesize_dataset

TRAIN_RECIPE = dict(n_clips=192, epochs=30, seed=0)


@dataclass(frozen=True)
class TrainedFixture:
    model: Denoiser
    schedule: NoiseSchedule
    path: Path  # checkpoint on disk, for CLI-facing tests


@pytest.fixture(scope="session")
def trained(tmp_path_factory) -> TrainedFixture:
    env = os.environ.get("NOISELAB_TEST_CKPT", "")
    if env and Path(env).exists():
        model, schedule, _ = load_checkpoint(env)
        return TrainedFixture(model, schedule, Path(env))
    schedule = build_cosine_schedule(1000)
    clips = synthesize_dataset(TRAIN_RECIPE["n_clips"],
                               seed=TRAIN_RECIPE["seed"])
    model = Denoiser(DenoiserArch(), rng=np.random.default_rng(0),
                     dtype=np.float32)
    train_denoiser(model, clips, schedule,
                   TrainConfig(epochs=TRAIN_RECIPE["epochs"],
                               seed=TRAIN_RECIPE["seed"]))
    path = tmp_path_factory.mktemp("ckpt") / "toy.ckpt"
    save_checkpoint(path, model, schedule, meta=dict(TRAIN_RECIPE))
    return TrainedFixture(model, schedule, path)
