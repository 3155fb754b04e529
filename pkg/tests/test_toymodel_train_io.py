"""Training loop behavior and checkpoint persistence."""

import numpy as np
import pytest

from noiselab.diffcore import build_cosine_schedule
from noiselab.toymodel import (CheckpointError, Denoiser, DenoiserArch,
                               TrainConfig, TrainingDiverged, load_checkpoint,
                               save_checkpoint, synthesize_dataset,
                               train_denoiser)


@pytest.fixture(scope="module")
def schedule():
    return build_cosine_schedule(1000)


@pytest.fixture(scope="module")
def clips():
    return synthesize_dataset(16, seed=1)


class TestTraining:
    def test_loss_decreases(self, schedule, clips):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(0),
                         dtype=np.float32)
        history = train_denoiser(model, clips, schedule,
                                 TrainConfig(epochs=3, batch_size=8, seed=0))
        assert len(history) == 3
        assert history[-1] < history[0]
        assert all(np.isfinite(history))

    def test_progress_logging(self, schedule, clips, capsys):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(0),
                         dtype=np.float32)
        history = train_denoiser(model, clips, schedule,
                                 TrainConfig(epochs=2, batch_size=8, seed=0,
                                             log_every=1))
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert f"{history[-1]:.4f}" in lines[-1]

    def test_determinism(self, schedule, clips):
        runs = []
        for _ in range(2):
            model = Denoiser(DenoiserArch(), rng=np.random.default_rng(0),
                             dtype=np.float32)
            runs.append(train_denoiser(
                model, clips, schedule,
                TrainConfig(epochs=1, batch_size=8, seed=3)))
        assert runs[0] == runs[1]

    def test_divergence_raises(self, schedule, clips):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(0),
                         dtype=np.float32)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDiverged) as err:
                train_denoiser(model, clips, schedule,
                               TrainConfig(epochs=50, batch_size=8, lr=1e6,
                                           seed=0))
        assert isinstance(err.value.history, list)

    def test_rejects_undersized_dataset(self, schedule, clips):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            train_denoiser(model, clips[:4], schedule,
                           TrainConfig(batch_size=8))


class TestCheckpointIO:
    def test_roundtrip_bit_exact(self, schedule, tmp_path):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(5))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, schedule, meta={"epochs": 3})
        loaded, sched2, meta = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.param_vector(),
                                      model.param_vector())
        assert sched2.to_dict() == schedule.to_dict()
        assert meta == {"epochs": 3}
        x = np.random.default_rng(0).standard_normal((1, 1, 64, 128))
        np.testing.assert_array_equal(loaded(x, t=10, style=0).values,
                                      model(x, t=10, style=0).values)

    def test_float32_dtype_preserved(self, schedule, tmp_path):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(6),
                         dtype=np.float32)
        path = tmp_path / "model32.ckpt"
        save_checkpoint(path, model, schedule)
        loaded, _, _ = load_checkpoint(path)
        assert loaded.dtype == np.float32

    def test_rejects_wrong_magic(self, schedule, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="not a denoiser"):
            load_checkpoint(path)

    def test_rejects_future_version(self, schedule, tmp_path):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(7))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, schedule)
        raw = bytearray(path.read_bytes())
        raw[4] = 2
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_rejects_truncated_body(self, schedule, tmp_path):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(8))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, schedule)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CheckpointError, match="count mismatch"):
            load_checkpoint(path)

    def test_requires_schedule_sidecar(self, schedule, tmp_path):
        model = Denoiser(DenoiserArch(), rng=np.random.default_rng(9))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, schedule)
        (tmp_path / "model.ckpt.sched.json").unlink()
        with pytest.raises(CheckpointError, match="sidecar"):
            load_checkpoint(path)
