"""Synthetic spectrogram clips with exact ground-truth annotations.

Each clip is a [F, N] grid of values in [-1, 1] (see features.scaling)
holding harmonic note stacks: a fundamental row per pitch class plus
partials at round(12 log2 m) rows above, with geometric amplitude decay.
Per frame, stack amplitudes are rescaled so the RMS over frequency equals
the target loudness exactly, which is what makes the annotations usable
as oracles: the intensity extractor, the chroma argmax, and the
self-similarity blocks all recover them by construction.

Styles differ in partial decay, loudness modulation period, and note
length; section letters within a clip switch the decay, giving sections
a timbre the structure features can see.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..features.pitch import N_CLASSES, fundamental_row, partial_offsets
from ..features.scaling import DB_RANGE, amp_coeff, unit_to_amp_np

__all__ = ["SyntheticClip", "StyleSpec", "default_styles", "render_frame",
           "synthesize_clip", "synthesize_dataset", "section_letters"]

N_PARTIALS = 4
INTENSITY_LO = -40.0  # dB; ceiling chosen so peak rows stay below 0 dBFS
INTENSITY_HI = -18.0
_DIAGRAMS = ("AB", "ABA", "ABBA", "AABB")


@dataclass(frozen=True)
class StyleSpec:
    """Per-style rendering knobs."""

    rolloff_a: float      # partial amplitude decay in 'A' sections
    rolloff_b: float      # decay in 'B' sections (timbre contrast)
    lfo_period: float     # loudness modulation period, frames
    note_len: int         # frames per melody note

    def rolloff(self, letter: str) -> float:
        return self.rolloff_a if letter == "A" else self.rolloff_b


def default_styles(n_styles: int = 4) -> list[StyleSpec]:
    base = [
        StyleSpec(rolloff_a=0.92, rolloff_b=0.48, lfo_period=48.0, note_len=8),
        StyleSpec(rolloff_a=0.50, rolloff_b=0.90, lfo_period=64.0, note_len=8),
        StyleSpec(rolloff_a=0.45, rolloff_b=0.85, lfo_period=36.0, note_len=16),
        StyleSpec(rolloff_a=0.95, rolloff_b=0.55, lfo_period=80.0, note_len=4),
    ]
    if not 1 <= n_styles <= len(base):
        raise ValueError(f"n_styles must be in 1..{len(base)}")
    return base[:n_styles]


@dataclass
class SyntheticClip:
    values: np.ndarray            # [F, N] in [-1, 1]
    style: int
    gt_intensity: np.ndarray      # [N] dB, exact frame RMS
    gt_melody: np.ndarray         # [N] pitch classes in 1..12
    gt_sections: str              # diagram, e.g. "ABBA"
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def f_bins(self) -> int:
        return self.values.shape[0]


def section_letters(diagram: str, n_frames: int) -> np.ndarray:
    letters = np.empty(n_frames, dtype="U1")
    for letter, frames in zip(diagram, np.array_split(np.arange(n_frames),
                                                      len(diagram))):
        letters[frames] = letter
    return letters


def render_frame(f_bins: int, pitch_class: int, rolloff: float,
                 target_db: float, db_range: float = DB_RANGE) -> np.ndarray:
    """One spectrogram column whose RMS over rows is exactly target_db."""
    offsets = partial_offsets(N_PARTIALS)
    rows = fundamental_row(pitch_class) + offsets
    if rows[-1] >= f_bins:
        raise ValueError(f"grid of {f_bins} rows cannot hold partial row {rows[-1]}")
    profile = np.zeros(f_bins)
    profile[rows] = rolloff ** np.arange(N_PARTIALS)
    floor_amp = unit_to_amp_np(-1.0, db_range)
    target_ms = (10.0 ** (target_db / 20.0)) ** 2
    inactive = profile == 0.0
    floor_ms = inactive.sum() * floor_amp ** 2 / f_bins
    if target_ms <= floor_ms:
        raise ValueError(f"target {target_db} dB is below the grid floor")
    gain = math.sqrt((f_bins * target_ms - inactive.sum() * floor_amp ** 2)
                     / float(np.sum(profile ** 2)))
    amp = np.where(inactive, floor_amp, gain * profile)
    value = np.log(amp) / amp_coeff(db_range) + 1.0
    if value.max() > 1.0 + 1e-9:
        raise ValueError(f"frame at {target_db} dB clips above 0 dBFS")
    return np.clip(value, -1.0, 1.0)


def _melody_walk(rng: np.random.Generator, n_frames: int, note_len: int
                 ) -> np.ndarray:
    n_notes = math.ceil(n_frames / note_len)
    classes = np.empty(n_notes, dtype=np.int64)
    classes[0] = rng.integers(1, N_CLASSES + 1)
    for i in range(1, n_notes):
        step = int(rng.integers(-3, 4))
        nxt = classes[i - 1] + (step if step != 0 else 1)
        while nxt > N_CLASSES:
            nxt -= N_CLASSES
        while nxt < 1:
            nxt += N_CLASSES
        classes[i] = nxt
    return np.repeat(classes, note_len)[:n_frames]


def _intensity_envelope(rng: np.random.Generator, n_frames: int,
                        period: float) -> np.ndarray:
    mid = 0.5 * (INTENSITY_LO + INTENSITY_HI)
    span = 0.5 * (INTENSITY_HI - INTENSITY_LO)
    phase = rng.uniform(0, 2 * np.pi)
    drift = rng.uniform(-0.3, 0.3) * span
    n = np.arange(n_frames)
    env = (mid + 0.75 * span * np.sin(2 * np.pi * n / period + phase)
           + drift * (n / max(n_frames - 1, 1) - 0.5))
    return np.clip(env, INTENSITY_LO, INTENSITY_HI)


def synthesize_clip(seed: int, style_id: int, styles: list[StyleSpec],
                    f_bins: int = 64, n_frames: int = 128,
                    db_range: float = DB_RANGE) -> SyntheticClip:
    rng = np.random.default_rng(seed)
    style = styles[style_id]
    diagram = _DIAGRAMS[int(rng.integers(len(_DIAGRAMS)))]
    letters = section_letters(diagram, n_frames)
    melody = _melody_walk(rng, n_frames, style.note_len)
    intensity = _intensity_envelope(rng, n_frames, style.lfo_period)
    grid = np.empty((f_bins, n_frames))
    for n in range(n_frames):
        grid[:, n] = render_frame(f_bins, int(melody[n]),
                                  style.rolloff(str(letters[n])),
                                  float(intensity[n]), db_range)
    return SyntheticClip(values=grid, style=style_id, gt_intensity=intensity,
                         gt_melody=melody, gt_sections=diagram, seed=seed,
                         meta={"db_range": db_range})


def synthesize_dataset(n_clips: int, n_styles: int = 4, f_bins: int = 64,
                       n_frames: int = 128, seed: int = 0,
                       db_range: float = DB_RANGE) -> list[SyntheticClip]:
    """Balanced dataset: clip i gets style i mod n_styles."""
    if n_clips < 1:
        raise ValueError("need at least one clip")
    styles = default_styles(n_styles)
    return [synthesize_clip(seed * 1_000_003 + i, i % n_styles, styles,
                            f_bins, n_frames, db_range)
            for i in range(n_clips)]
