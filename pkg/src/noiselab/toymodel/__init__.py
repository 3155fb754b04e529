"""Synthetic data, the toy denoiser, training, and persistence."""

from .synth import (StyleSpec, SyntheticClip, default_styles, render_frame,
                    section_letters, synthesize_clip, synthesize_dataset)
from .denoiser import Denoiser, DenoiserArch, sinusoidal_embedding
from .train import TrainConfig, TrainingDiverged, train_denoiser
from .checkpoint_io import (CheckpointError, DenoiserCheckpoint,
                            FORMAT_VERSION, load_checkpoint, save_checkpoint)

__all__ = [
    "SyntheticClip", "StyleSpec", "default_styles", "render_frame",
    "section_letters", "synthesize_clip", "synthesize_dataset",
    "Denoiser", "DenoiserArch", "sinusoidal_embedding",
    "TrainConfig", "TrainingDiverged", "train_denoiser",
    "DenoiserCheckpoint", "save_checkpoint", "load_checkpoint",
    "CheckpointError", "FORMAT_VERSION",
]
