#!/usr/bin/env python3
# Multi-resolution decomposition tests

import numpy as np
import pytest

import multires
from conftest import WAVE_OMEGA, travelling_wave
from dmd_core import exact_dmd
from multires import (LOWFREQ, LevelConfig, WindowedMode, assign_bands,
                      band_amplitude, band_reconstruct, band_reconstructions,
                      band_spatial_pattern, band_waveform, decompose,
                      default_levels, fit_level, match_components,
                      prominent_maxima, scale_separate, sliding_windows,
                      spatial_stability, stitch, stitch_weights,
                      summarize_band, total_reconstruction)
from phasor import PhasorMode, phasor_reconstruct_pair
from snapshots import (BandCountWarning, CoverageError, Grid1D,
                       InvalidArgumentError, SnapshotMatrix, relative_error)


def _mode(omega, b=1.0, mu=0.0, span=(0.0, 1.0), k=0, j=0, level=0, n_space=1):
    phasor = PhasorMode(j, np.ones(n_space), np.zeros(n_space), omega, mu, b)
    return WindowedMode(j, k, level, phasor, span, (0, 0))


class TestConfig:

    def test_default_levels(self):
        levels = default_levels()
        assert [c.window_length for c in levels] == [60, 120, 480]
        assert [c.stride for c in levels] == [6, 12, 48]
        assert all(c.rank == 6 for c in levels)

    def test_default_cut(self):
        assert LevelConfig(60, 6, 6).cut(0.05) == pytest.approx(2 * np.pi / 3)
        assert LevelConfig(60, 6, 6, freq_cut=1.5).cut(0.05) == 1.5

    def test_window_refinement_defaults(self):
        assert all(c.refine == "varpro" for c in default_levels())
        assert LevelConfig.from_fraction(60).refine == "varpro"
        assert LevelConfig(60, 6, 6).refine == "none"
        assert default_levels(refine="none")[0].refine == "none"

    def test_invalid_config(self):
        with pytest.raises(InvalidArgumentError):
            LevelConfig(10, 5, 2, refine="bfgs")
        with pytest.raises(InvalidArgumentError):
            LevelConfig(10, 0, 2)
        with pytest.raises(InvalidArgumentError):
            LevelConfig(10, 11, 2)
        with pytest.raises(InvalidArgumentError):
            LevelConfig(10, 5, 0)


class TestWindows:

    def test_tail_window_right_aligned(self):
        assert sliding_windows(100, LevelConfig(30, 20, 2)) == [
            (0, 30), (20, 50), (40, 70), (60, 90), (70, 100)]

    def test_ten_percent_stride_example(self):
        starts = [s for s, _ in sliding_windows(100, LevelConfig(60, 6, 6))]
        assert starts == [0, 6, 12, 18, 24, 30, 36, 40]

    def test_exact_cover(self):
        assert sliding_windows(90, LevelConfig(30, 30, 2)) == [(0, 30), (30, 60), (60, 90)]

    def test_window_longer_than_series(self):
        with pytest.raises(InvalidArgumentError):
            sliding_windows(50, LevelConfig(60, 6, 2))


class TestStitch:

    def test_weights_sum_to_one(self):
        spans = sliding_windows(100, LevelConfig(30, 7, 2))
        for taper in ("hann", "boxcar"):
            weights = stitch_weights(spans, 100, taper)
            np.testing.assert_allclose(weights.sum(axis=0), 1.0, atol=1e-15)
            assert np.all(weights >= 0)

    def test_single_window_identity(self):
        data = np.random.default_rng(0).standard_normal((3, 12))
        np.testing.assert_array_equal(stitch([data], [(0, 12)]), data)

    def test_overlapping_identical_windows(self):
        data = np.random.default_rng(1).standard_normal((2, 30))
        spans = [(0, 20), (10, 30)]
        out = stitch([data[:, s:e] for s, e in spans], spans)
        np.testing.assert_allclose(out, data, rtol=1e-14, atol=1e-15)

    def test_uncovered_indices(self):
        with pytest.raises(CoverageError):
            stitch_weights([(0, 5)], 8)

    def test_unknown_taper(self):
        with pytest.raises(InvalidArgumentError):
            stitch_weights([(0, 5)], 5, "triangle")


class TestLevel:

    def test_window_fits_recover_frequency(self, wave):
        cfg = LevelConfig(80, 40, 6)
        fits = fit_level(wave, cfg, workers=2)
        assert len(fits) == len(sliding_windows(wave.n_time, cfg))
        for fit in fits:
            assert fit.ok
            assert len(fit.paired.pairs) == 1
            lam = fit.paired.model.eigenvalues[fit.paired.pairs[0][0]]
            assert lam.imag == pytest.approx(WAVE_OMEGA, abs=1e-8)
            np.testing.assert_allclose(fit.mean, 0.0, atol=1e-12)

    def test_varpro_windows_recover_frequency(self, wave):
        cfg = LevelConfig(80, 40, 6, refine="varpro")
        fits = fit_level(wave, cfg, workers=2)
        for fit in fits:
            assert fit.ok and fit.paired.is_strict
            lam = fit.paired.model.eigenvalues[fit.paired.pairs[0][0]]
            assert lam.imag == pytest.approx(WAVE_OMEGA, abs=1e-8)
        with pytest.raises(InvalidArgumentError):
            fit_level(wave, cfg, refine="bfgs")

    def test_failing_window_is_skipped(self, wave, monkeypatch):
        calls = []

        def flaky(X, r):
            calls.append(r)
            if len(calls) == 2:
                raise np.linalg.LinAlgError("SVD did not converge")
            return exact_dmd(X, r)

        monkeypatch.setattr(multires, "exact_dmd", flaky)
        fits = fit_level(wave, LevelConfig(40, 40, 6), workers=1)
        assert [f.ok for f in fits].count(False) == 1
        (failed,) = [f for f in fits if not f.ok]
        assert "SVD did not converge" in failed.error
        assert failed.paired is None

    def test_cut_above_everything_keeps_all_low(self, wave):
        cfg = LevelConfig(80, 40, 6, freq_cut=np.inf)
        lowfreq, retained = scale_separate(fit_level(wave, cfg), cfg, wave)
        assert retained == []
        assert relative_error(lowfreq, wave.values) < 1e-8

    def test_zero_cut_retains_every_pair(self, wave):
        cfg = LevelConfig(80, 40, 6, freq_cut=0.0)
        fits = fit_level(wave, cfg)
        lowfreq, retained = scale_separate(fits, cfg, wave)
        assert len(retained) == len(fits)
        assert np.max(np.abs(lowfreq)) < 1e-10
        assert retained[1].window_span == pytest.approx((wave.time.points[40], wave.time.points[119]))

    def test_constant_windows_give_empty_models(self):
        X = SnapshotMatrix(np.full((4, 100), 3.0), Grid1D.arange(4, 1.0), Grid1D.arange(100, 0.1))
        cfg = LevelConfig(20, 10, 4)
        fits = fit_level(X, cfg)
        assert all(f.ok and f.paired.model.rank == 0 for f in fits)
        lowfreq, retained = scale_separate(fits, cfg, X)
        assert retained == []
        np.testing.assert_allclose(lowfreq, 3.0, rtol=1e-15)


class TestBands:

    def test_auto_band_count(self):
        modes = [_mode(w) for w in (1.0, 1.1, 1.2, 10.0, 11.0, 12.0)]
        np.testing.assert_array_equal(assign_bands(modes), [0, 0, 0, 1, 1, 1])

    def test_auto_count_follows_strong_modes(self):
        strong = [(0.5, 5.0), (3.0, 3.0), (10.0, 2.0)]
        modes = [_mode(w * (1 + 0.01 * i), b) for w, b in strong for i in range(5)]
        modes += [_mode(1.5 * (1 + 0.01 * i), 0.05) for i in range(15)]
        labels = assign_bands(modes)
        assert len(set(labels)) == 3
        assert labels[0] == 0 and labels[10] == 2
        unweighted = assign_bands(modes, weights=np.ones(len(modes)))
        assert len(set(unweighted)) == 4

    def test_invalid_band_weights(self):
        modes = [_mode(w) for w in (1.0, 2.0, 3.0)]
        with pytest.raises(InvalidArgumentError):
            assign_bands(modes, weights=[1.0, -1.0, 1.0])
        with pytest.raises(InvalidArgumentError):
            assign_bands(modes, weights=[1.0, 1.0])

    def test_labels_ordered_by_frequency(self):
        modes = [_mode(w) for w in (10.0, 1.0, 11.0, 1.1)]
        np.testing.assert_array_equal(assign_bands(modes, 2), [1, 0, 1, 0])

    def test_too_many_bands_reduced(self):
        modes = [_mode(w) for w in (1.0, 1.0, 5.0)]
        with pytest.warns(BandCountWarning):
            labels = assign_bands(modes, 3)
        np.testing.assert_array_equal(labels, [0, 0, 1])

    def test_identical_frequencies_collapse_to_one_band(self):
        modes = [_mode(2.8) for _ in range(4)]
        with pytest.warns(BandCountWarning):
            labels = assign_bands(modes, 2)
        np.testing.assert_array_equal(labels, 0)
        np.testing.assert_array_equal(assign_bands(modes, 1), 0)

    def test_empty_band_list(self):
        with pytest.raises(InvalidArgumentError):
            assign_bands([])


class TestBandTerms:

    t = np.linspace(0.0, 2.0, 5)

    def _band(self):
        return [_mode(3.0, b=2.0, span=(0.0, 1.0), k=0),
                _mode(3.0, b=2.0, span=(0.5, 1.5), k=1)]

    def test_band_amplitude_sums_active_windows(self):
        np.testing.assert_allclose(band_amplitude(self._band(), self.t), [2, 4, 4, 2, 0])

    def test_weighted_terms_bounded(self):
        S_p = band_spatial_pattern(self._band(), self.t)
        W_p = band_waveform(self._band(), self.t)
        assert np.all(np.isnan(S_p[:, -1])) and np.all(np.isnan(W_p[:, -1]))
        assert np.all(S_p[:, :-1] >= 0)
        assert np.all(np.abs(W_p[:, :-1]) <= 1.0)

    def test_decaying_contribution(self):
        beta = band_amplitude([_mode(1.0, b=1.0, mu=-1.0, span=(0.0, 2.0))], [1.0])
        assert beta[0] == pytest.approx(np.exp(-1.0))

    def test_weighted_pattern_average(self):
        heavy = _mode(1.0, b=3.0, span=(0.0, 2.0), k=0)
        light = WindowedMode(0, 1, 0, PhasorMode(0, [0.0], [0.0], 1.0, 0.0, 1.0), (0.0, 2.0), (0, 0))
        S_p = band_spatial_pattern([heavy, light], [0.5])
        assert S_p[0, 0] == pytest.approx(0.75)

    def test_single_mode_reconstruction(self):
        mode = _mode(2.0, b=0.5, mu=-0.1, span=(0.0, 2.0), n_space=3)
        recon = band_reconstruct([mode], self.t)
        np.testing.assert_allclose(recon, phasor_reconstruct_pair(mode.phasor, self.t), atol=1e-15)

    def test_empty_band(self):
        with pytest.raises(InvalidArgumentError):
            band_amplitude([], self.t)

    def test_stability_and_maxima(self):
        assert spatial_stability(np.ones((4, 20))) == 0.0
        t = np.linspace(0, 64, 1280)
        assert len(prominent_maxima(np.abs(np.sin(2 * np.pi * t / 64)))) == 2

    def test_match_components(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 3, 10))
        assignment, errors, _ = match_components({0: 1.01 * a, LOWFREQ: b}, {"a": a, "b": b})
        assert assignment == {0: "a", LOWFREQ: "b"}
        assert errors["a"] == pytest.approx(0.01)
        assert errors["b"] == 0.0


class TestDecompose:

    def test_single_level_exact_sum(self, wave):
        decomp = decompose(wave, [LevelConfig(80, 40, 6)], n_bands=1)
        assert decomp.band_labels == [0]
        assert relative_error(total_reconstruction(decomp), wave.values) < 1e-8
        recons = band_reconstructions(decomp)
        assert relative_error(recons[0], wave.values) < 1e-8

    def test_whole_series_window_approximation(self):
        wave = travelling_wave(n_time=200)
        decomp = decompose(wave, [LevelConfig(200, 200, 6)], n_bands=1)
        summary = summarize_band(decomp, 0)
        assert np.all(summary.beta > 0)
        np.testing.assert_allclose(summary.approx, summary.recon, atol=1e-10)

    def test_constant_data_is_all_lowfreq(self):
        X = SnapshotMatrix(np.full((4, 100), 3.0), Grid1D.arange(4, 1.0), Grid1D.arange(100, 0.1))
        decomp = decompose(X, [LevelConfig(20, 10, 4)])
        assert decomp.bands == {}
        np.testing.assert_allclose(decomp.lowfreq_residual, 3.0, rtol=1e-15)

    def test_worker_count_does_not_change_result(self):
        wave = travelling_wave(n_time=480)
        levels = [LevelConfig.from_fraction(60)]
        serial = decompose(wave, levels, n_bands=1, workers=1)
        pooled = decompose(wave, levels, n_bands=1, workers=8)
        np.testing.assert_array_equal(serial.lowfreq_residual, pooled.lowfreq_residual)
        assert serial.bands == pooled.bands
        assert len(serial.modes) == len(pooled.modes) > 0
        for a, b in zip(serial.modes, pooled.modes):
            assert a.triplet == b.triplet and a.band == b.band
            assert (a.phasor.omega, a.phasor.mu, a.phasor.b) == (b.phasor.omega, b.phasor.mu, b.phasor.b)
            np.testing.assert_array_equal(a.phasor.S, b.phasor.S)
            np.testing.assert_array_equal(a.phasor.varphi, b.phasor.varphi)

    def test_level_order_validated(self, wave):
        with pytest.raises(InvalidArgumentError):
            decompose(wave, [LevelConfig(120, 12, 6), LevelConfig(60, 6, 6)])
        with pytest.raises(InvalidArgumentError):
            decompose(wave, [LevelConfig(500, 50, 6)])


@pytest.mark.slow
class TestMultiscale:

    @pytest.fixture(scope="class")
    def result(self, multiscale):
        X, truth = multiscale
        decomp = decompose(X, default_levels())
        recons = band_reconstructions(decomp)
        assignment, errors, _ = match_components(recons, truth.components())
        return X, truth, decomp, recons, errors

    def _best_band(self, decomp, recons, target):
        scores = {label: np.sum(recons[label] * target) / np.linalg.norm(recons[label])
                  for label in decomp.band_labels}
        return max(scores, key=scores.get)

    def test_all_windows_fitted(self, result):
        _, _, decomp, _, _ = result
        assert [level.n_failed for level in decomp.levels] == [0, 0, 0]

    def test_automatic_band_count(self, result):
        _, _, decomp, recons, _ = result
        assert len(decomp.band_labels) == 3
        assert set(recons) == {0, 1, 2, LOWFREQ}

    def test_total_error_reported(self, result):
        X, _, decomp, recons, errors = result
        total = relative_error(sum(recons.values()), X.values)
        assert total <= 0.10
        assert set(errors) == {"slow", "fast", "transient"}
        assert all(err <= 0.15 for err in errors.values()), errors

    def test_summed_term_properties(self, result):
        _, _, decomp, _, _ = result
        weights = decomp.window_weights()
        for label in decomp.band_labels:
            s = summarize_band(decomp, label, weights)
            defined = s.beta > 0
            assert np.all(s.beta >= 0)
            assert np.all(s.S_p[:, defined] >= 0)
            assert np.all(np.abs(s.W_p[:, defined]) <= 1.0 + 1e-12)

    def test_transient_amplitude_has_two_maxima(self, result):
        _, truth, decomp, recons, _ = result
        label = self._best_band(decomp, recons, truth.x_tran)
        beta = summarize_band(decomp, label).beta
        assert len(prominent_maxima(beta)) == 2

    def test_oscillator_patterns_static(self, result):
        _, truth, decomp, recons, _ = result
        margin = default_levels()[-1].window_length
        for target in (truth.x_fast, truth.x_slow):
            label = self._best_band(decomp, recons, target)
            assert spatial_stability(summarize_band(decomp, label).S_p, margin) < 0.2

    def test_summed_terms_approximate_band(self, result):
        _, truth, decomp, recons, _ = result
        label = self._best_band(decomp, recons, truth.x_fast)
        s = summarize_band(decomp, label)
        strong = s.beta > 0.1 * s.beta.max()
        diff = s.approx[:, strong] - s.recon[:, strong]
        assert np.sqrt(np.mean(diff ** 2)) <= 0.2 * np.sqrt(np.mean(s.recon[:, strong] ** 2))
