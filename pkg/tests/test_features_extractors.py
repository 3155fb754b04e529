"""Feature extractors against the synthesizer's exact annotations.

The renderer normalizes every frame to its target RMS and places note
energy at known rows, so the clips double as oracles: the intensity curve
must equal the smoothed annotation, the chroma argmax must equal the
melody, and the self-similarity matrix must separate section blocks.
"""

import numpy as np
import pytest

from noiselab import gradkit as gk
from noiselab.features import (UNIFORM_NLL, IntensityExtractorSpec, chroma,
                               intensity_corr_loss, intensity_curve,
                               intensity_mse, melody_accuracy, melody_nll,
                               mfcc_ss, smooth_1d, structure_mse,
                               structure_target_from_diagram,
                               structure_transfer_target)
from noiselab.features.pitch import N_CLASSES
from noiselab.toymodel import default_styles, synthesize_clip

from _oracles import assert_grads_close


@pytest.fixture(scope="module")
def clips():
    styles = default_styles(4)
    return [synthesize_clip(seed=100 + i, style_id=i % 4, styles=styles)
            for i in range(4)]


def _moving_average(curve, window):
    half = window // 2
    padded = np.pad(curve, half, mode="edge")
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


class TestIntensity:
    def test_recovers_annotation_exactly(self, clips):
        spec = IntensityExtractorSpec()
        for clip in clips:
            got = intensity_curve(gk.constant(clip.values), spec).values
            want = _moving_average(clip.gt_intensity, spec.window)
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_floor_engages_on_silence(self):
        silent = np.full((64, 32), -1.0)
        got = intensity_curve(gk.constant(silent)).values
        np.testing.assert_allclose(got, -60.0, atol=1e-12)

    def test_smooth_1d_matches_numpy(self):
        rng = np.random.default_rng(3)
        curve = rng.normal(size=50)
        got = smooth_1d(gk.constant(curve), 9).values
        np.testing.assert_allclose(got, _moving_average(curve, 9), atol=1e-12)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            IntensityExtractorSpec(window=4)
        with pytest.raises(ValueError):
            IntensityExtractorSpec(floor_db=-200.0)
        with pytest.raises(ValueError):
            smooth_1d(gk.constant(np.zeros(5)), 9)

    def test_mse_zero_at_target(self, clips):
        clip = clips[0]
        spec = IntensityExtractorSpec()
        curve = intensity_curve(gk.constant(clip.values), spec)
        target = _moving_average(clip.gt_intensity, spec.window)
        assert intensity_mse(curve, target).item() < 1e-18

    def test_corr_loss_bounds_and_sign(self, clips):
        clip = clips[0]
        curve = intensity_curve(gk.constant(clip.values))
        target = _moving_average(clip.gt_intensity, 17)
        loss = intensity_corr_loss(curve, target).item()
        assert loss == pytest.approx(-1.0, abs=1e-3)
        flipped = intensity_corr_loss(curve, -target).item()
        assert flipped == pytest.approx(1.0, abs=1e-3)

    def test_corr_loss_rejects_flat_target(self):
        curve = gk.constant(np.linspace(-30, -20, 40))
        with pytest.raises(ValueError):
            intensity_corr_loss(curve, np.full(40, -25.0))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-0.9, 0.3, size=(12, 24))
        target = rng.uniform(-40, -20, size=24)
        assert_grads_close(
            lambda xs: intensity_mse(intensity_curve(xs[0]), target), [x],
            rel=2e-5)


class TestChroma:
    def test_columns_sum_to_one(self, clips):
        for clip in clips:
            c = chroma(gk.constant(clip.values)).values
            assert c.shape == (N_CLASSES, clip.n_frames)
            np.testing.assert_allclose(c.sum(axis=0), 1.0, atol=1e-9)
            assert np.all(c >= 0)

    def test_argmax_recovers_melody(self, clips):
        for clip in clips:
            assert melody_accuracy(clip.values, clip.gt_melody) == 1.0

    def test_silence_is_uniform(self):
        # the normalization epsilon shaves ~1e-7 off each column sum
        c = chroma(gk.constant(np.full((64, 8), -1.0))).values
        np.testing.assert_allclose(c, 1.0 / N_CLASSES, atol=1e-6)

    def test_nll_near_zero_on_match_and_uniform_on_silence(self, clips):
        clip = clips[0]
        nll = melody_nll(gk.constant(clip.values), clip.gt_melody).item()
        assert 0.0 <= nll < 0.35  # partials leak into other classes
        silent = melody_nll(gk.constant(np.full((64, clip.n_frames), -1.0)),
                            clip.gt_melody).item()
        assert silent == pytest.approx(UNIFORM_NLL, abs=1e-5)
        assert UNIFORM_NLL == pytest.approx(np.log(12.0), abs=1e-6)

    def test_wrong_melody_scores_worse(self, clips):
        clip = clips[0]
        wrong = clip.gt_melody % N_CLASSES + 1  # shift every class by one
        good = melody_nll(gk.constant(clip.values), clip.gt_melody).item()
        bad = melody_nll(gk.constant(clip.values), wrong).item()
        assert bad > good + 1.0

    def test_class_validation(self, clips):
        clip = clips[0]
        with pytest.raises(ValueError):
            melody_nll(gk.constant(clip.values), clip.gt_melody[:-1])
        with pytest.raises(ValueError):
            melody_nll(gk.constant(clip.values),
                       np.zeros(clip.n_frames, dtype=int))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-0.9, 0.3, size=(16, 10))
        classes = rng.integers(1, N_CLASSES + 1, size=10)
        assert_grads_close(lambda xs: melody_nll(xs[0], classes), [x],
                           rel=2e-5)


class TestStructure:
    def test_dct_basis_orthonormal(self):
        from noiselab.features.structure import _dct_rows
        basis = _dct_rows(64, 19, np.float64)
        assert basis.shape == (19, 64)
        np.testing.assert_allclose(basis @ basis.T, np.eye(19), atol=1e-12)

    def test_ss_symmetric_with_unit_mean_diagonal(self, clips):
        ss = mfcc_ss(gk.constant(clips[0].values), smooth=False).values
        n = clips[0].n_frames
        assert ss.shape == (n, n)
        np.testing.assert_allclose(ss, ss.T, atol=1e-12)
        # z-scoring normalizes each coefficient across time, so individual
        # diagonal entries vary but their time average is pinned to 1
        assert np.diag(ss).mean() == pytest.approx(1.0, abs=1e-4)

    def test_sections_separate(self, clips):
        for clip in clips:
            ss = mfcc_ss(gk.constant(clip.values)).values
            blocks = structure_target_from_diagram(clip.gt_sections,
                                                   clip.n_frames)
            off = ~np.eye(clip.n_frames, dtype=bool)
            same = ss[(blocks == 1.0) & off].mean()
            diff = ss[blocks == 0.0].mean()
            assert same > diff + 0.08

    def test_smoothing_preserves_separation(self, clips):
        clip = clips[1]
        raw = mfcc_ss(gk.constant(clip.values), smooth=False).values
        smoothed = mfcc_ss(gk.constant(clip.values), smooth=True).values
        # quadratic filter keeps local means: global structure survives
        assert abs(raw.mean() - smoothed.mean()) < 0.05
        assert smoothed.std() < raw.std() + 1e-9

    def test_diagram_target_blocks(self):
        t = structure_target_from_diagram("ABA", 12)
        assert t.shape == (12, 12)
        np.testing.assert_array_equal(np.diag(t), 1.0)
        np.testing.assert_array_equal(t, t.T)
        assert t[0, 8] == 1.0   # both A sections
        assert t[0, 5] == 0.0   # A against B
        with pytest.raises(ValueError):
            structure_target_from_diagram("", 12)
        with pytest.raises(ValueError):
            structure_target_from_diagram("ABAB", 3)

    def test_transfer_target_is_own_minimum(self, clips):
        clip = clips[2]
        target = structure_transfer_target(clip.values)
        ss = mfcc_ss(gk.constant(clip.values))
        assert structure_mse(ss, target).item() < 1e-18
        other = mfcc_ss(gk.constant(clips[3].values))
        assert structure_mse(other, target).item() > 1e-3

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(-0.9, 0.3, size=(24, 12))
        target = structure_target_from_diagram("AB", 12)
        assert_grads_close(
            lambda xs: structure_mse(mfcc_ss(xs[0], n_coeffs=6, window=5),
                                     target),
            [x], rel=5e-5)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            mfcc_ss(gk.constant(np.zeros((4, 4, 4))))
        with pytest.raises(ValueError):
            mfcc_ss(gk.constant(np.zeros((8, 16))), n_coeffs=9)
        with pytest.raises(ValueError):
            structure_mse(gk.constant(np.zeros((4, 4))), np.zeros((5, 5)))
