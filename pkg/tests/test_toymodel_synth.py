"""Synthesizer invariants: the annotations must be exact by construction."""

import numpy as np
import pytest

from noiselab.features.pitch import N_CLASSES, fundamental_row
from noiselab.features.scaling import unit_to_amp_np
from noiselab.toymodel import (StyleSpec, default_styles, render_frame,
                               section_letters, synthesize_clip,
                               synthesize_dataset)
from noiselab.toymodel.synth import (_DIAGRAMS, INTENSITY_HI, INTENSITY_LO,
                                     N_PARTIALS)


@pytest.fixture(scope="module")
def clip():
    return synthesize_clip(seed=7, style_id=1, styles=default_styles(4))


class TestRenderFrame:
    def test_rms_is_exact(self):
        for db in (-40.0, -30.0, -18.0):
            for rolloff in (0.45, 0.7, 0.95):
                frame = render_frame(64, pitch_class=5, rolloff=rolloff,
                                     target_db=db)
                amp = unit_to_amp_np(frame)
                rms_db = 10.0 * np.log10(np.mean(amp ** 2))
                assert rms_db == pytest.approx(db, abs=1e-9)

    def test_energy_sits_on_partial_rows(self):
        frame = render_frame(64, pitch_class=3, rolloff=0.8, target_db=-24.0)
        rows = fundamental_row(3) + np.array([0, 12, 19, 24])
        hot = frame > -1.0 + 1e-9
        assert set(np.flatnonzero(hot)) == set(rows.tolist())
        amps = unit_to_amp_np(frame[rows])
        ratios = amps[1:] / amps[:-1]
        np.testing.assert_allclose(ratios, 0.8, rtol=1e-9)

    def test_rejects_impossible_targets(self):
        with pytest.raises(ValueError):
            render_frame(64, 1, 0.8, target_db=-81.0)  # below the floor
        with pytest.raises(ValueError):
            render_frame(64, 1, 0.8, target_db=0.0)    # would clip
        with pytest.raises(ValueError):
            render_frame(20, 12, 0.8, target_db=-24.0)  # partial off-grid

    def test_headroom_at_loudest_setting(self):
        # the loudest target with the sharpest rolloff must not clip
        frame = render_frame(64, 1, 0.45, target_db=INTENSITY_HI)
        assert frame.max() < 1.0


class TestSectionLetters:
    def test_partition_even_split(self):
        letters = section_letters("ABBA", 16)
        assert "".join(letters) == "AAAA" + "BBBB" + "BBBB" + "AAAA"

    def test_uneven_split_covers_all_frames(self):
        letters = section_letters("ABA", 128)
        assert letters.shape == (128,)
        assert set(letters) == {"A", "B"}


class TestSynthesizeClip:
    def test_shapes_and_ranges(self, clip):
        assert clip.values.shape == (64, 128)
        assert clip.values.min() >= -1.0 and clip.values.max() <= 1.0
        assert clip.gt_intensity.shape == (128,)
        assert np.all(clip.gt_intensity >= INTENSITY_LO)
        assert np.all(clip.gt_intensity <= INTENSITY_HI)
        assert clip.gt_melody.shape == (128,)
        assert np.all((clip.gt_melody >= 1) & (clip.gt_melody <= N_CLASSES))
        assert clip.gt_sections in _DIAGRAMS

    def test_per_frame_rms_matches_annotation(self, clip):
        amp = unit_to_amp_np(clip.values)
        rms_db = 10.0 * np.log10(np.mean(amp ** 2, axis=0))
        np.testing.assert_allclose(rms_db, clip.gt_intensity, atol=1e-9)

    def test_melody_annotation_is_piecewise_constant(self):
        styles = default_styles(4)
        clip = synthesize_clip(seed=3, style_id=2, styles=styles)  # note_len 16
        notes = clip.gt_melody.reshape(-1, 16)
        assert np.all(notes == notes[:, :1])

    def test_seed_determinism(self):
        styles = default_styles(4)
        a = synthesize_clip(seed=11, style_id=0, styles=styles)
        b = synthesize_clip(seed=11, style_id=0, styles=styles)
        np.testing.assert_array_equal(a.values, b.values)
        c = synthesize_clip(seed=12, style_id=0, styles=styles)
        assert not np.array_equal(a.values, c.values)

    def test_sections_switch_timbre(self):
        style = StyleSpec(rolloff_a=0.9, rolloff_b=0.5, lfo_period=48.0,
                          note_len=8)
        f_a = render_frame(64, 4, style.rolloff("A"), -24.0)
        f_b = render_frame(64, 4, style.rolloff("B"), -24.0)
        rows = fundamental_row(4) + np.array([0, 12, 19, 24])
        # same pitch and loudness, different partial balance
        assert not np.allclose(f_a[rows], f_b[rows])


class TestSynthesizeDataset:
    def test_balanced_styles(self):
        clips = synthesize_dataset(12, n_styles=4, seed=5)
        assert [c.style for c in clips] == [i % 4 for i in range(12)]
        assert len({c.seed for c in clips}) == 12

    def test_partials_constant(self):
        assert N_PARTIALS == 4

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            synthesize_dataset(0)
        with pytest.raises(ValueError):
            default_styles(9)
