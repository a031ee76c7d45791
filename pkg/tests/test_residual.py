import json

import numpy as np
import pytest

from impactsynth import (DataError, FilterBank, PhysicsPriors, ResidualParams,
                         StftConfig, estimate_modes, fit_residual,
                         load_priors, multires_stft_loss, save_priors,
                         synthesize_modes, synthesize_residual)
from impactsynth.dsp import bandpass_split, default_loss_configs, hann_window
from impactsynth.synthetic import random_modes, random_residual

CFG = StftConfig()


class TestSynthesizeResidual:
    def test_zero_weights_give_silence(self):
        params = ResidualParams.zeros(44100, 100)
        assert np.all(synthesize_residual(params, 0.25, 44100) == 0)

    def test_single_band_envelope_slope(self):
        params = ResidualParams.zeros(44100, 100, noise_seed=3)
        params.weights[1] = 1.0
        params.gamma[1] = 160.0
        sig = synthesize_residual(params, 0.25, 44100)

        # envelope regression oracle: frame RMS of the band-limited signal
        win, hop = 2048, 256
        w = hann_window(win)
        pad = np.pad(sig, win // 2, mode="reflect", reflect_type="odd")
        n_frames = sig.size // hop + 1
        frames = np.stack([pad[i * hop : i * hop + win] * w
                           for i in range(n_frames)])
        env_db = 20 * np.log10(np.sqrt((frames ** 2).mean(axis=1)) + 1e-12)
        times = np.arange(n_frames) * hop / 44100
        sel = slice(2, n_frames - 8)
        slope = np.polyfit(times[sel], env_db[sel], 1)[0]
        assert abs(-slope - 160.0) / 160.0 <= 0.10

    def test_seeded_determinism(self):
        params = ResidualParams.zeros(44100, 50, noise_seed=5)
        params.weights[7] = 0.02
        a = synthesize_residual(params, 0.25, 44100)
        b = synthesize_residual(params, 0.25, 44100)
        assert np.array_equal(a, b)
        other = params.copy()
        other.noise_seed = 6
        assert not np.array_equal(a, synthesize_residual(other, 0.25, 44100))

    def test_linear_in_weights(self):
        params = ResidualParams.zeros(44100, 50, noise_seed=1)
        params.weights[3] = 0.004
        params.weights[20] = 0.01
        params.gamma[3] = 90.0
        base = synthesize_residual(params, 0.25, 44100)
        scaled = params.copy()
        scaled.weights = params.weights * 2.5
        out = synthesize_residual(scaled, 0.25, 44100)
        assert np.linalg.norm(out - 2.5 * base) <= 1e-9 * np.linalg.norm(out)

    def test_validation(self):
        with pytest.raises(DataError):
            ResidualParams(np.zeros(10), np.zeros(9), np.linspace(0, 4000, 11))
        with pytest.raises(DataError):
            ResidualParams(-np.ones(10), np.zeros(10), np.linspace(0, 4000, 11))
        params = ResidualParams.zeros(44100, 10)
        with pytest.raises(ValueError):
            synthesize_residual(params, 0.0, 44100)


class TestFitResidual:
    def test_pure_modal_target_gets_negligible_residual(self):
        rng = np.random.default_rng(2)
        modes_true = random_modes(rng, CFG, num_active=6)
        clip = synthesize_modes(modes_true, 0.25)
        modes_est = estimate_modes(clip, CFG)
        fitted = fit_residual(clip, modes_est, noise_seed=0)
        resolutions = default_loss_configs(44100)
        modal = synthesize_modes(modes_est, 0.25)
        loss_fit = multires_stft_loss(
            modal + synthesize_residual(fitted, 0.25, 44100), clip, resolutions)
        loss_zero = multires_stft_loss(modal, clip, resolutions)
        assert loss_fit <= loss_zero + 1e-6
        res_energy = np.sum(synthesize_residual(fitted, 0.25, 44100) ** 2)
        assert res_energy < 0.05 * np.sum(modal ** 2)

    def test_recovers_known_residual_within_margin(self):
        rng = np.random.default_rng(4)
        modes_true = random_modes(rng, CFG, num_active=6)
        res_true = random_residual(rng, num_active=5, noise_seed=0)
        clip = (synthesize_modes(modes_true, 0.25)
                + synthesize_residual(res_true, 0.25, 44100))
        modes_est = estimate_modes(clip, CFG)
        fitted = fit_residual(clip, modes_est, noise_seed=0)
        resolutions = default_loss_configs(44100)
        modal = synthesize_modes(modes_est, 0.25)
        loss_fit = multires_stft_loss(
            modal + synthesize_residual(fitted, 0.25, 44100), clip, resolutions)
        loss_truth = multires_stft_loss(
            modal + synthesize_residual(res_true, 0.25, 44100), clip, resolutions)
        loss_zero = multires_stft_loss(modal, clip, resolutions)
        assert loss_fit <= 1.1 * loss_truth
        assert loss_fit <= loss_zero

    def test_respects_explicit_init(self):
        rng = np.random.default_rng(6)
        modes_true = random_modes(rng, CFG, num_active=4)
        res_true = random_residual(rng, num_active=3, noise_seed=9)
        clip = (synthesize_modes(modes_true, 0.25)
                + synthesize_residual(res_true, 0.25, 44100))
        modes_est = estimate_modes(clip, CFG)
        fitted = fit_residual(clip, modes_est, init=res_true.copy())
        assert fitted.noise_seed == 9
        resolutions = default_loss_configs(44100)
        modal = synthesize_modes(modes_est, 0.25)
        loss_fit = multires_stft_loss(
            modal + synthesize_residual(fitted, 0.25, 44100), clip, resolutions)
        loss_truth = multires_stft_loss(
            modal + synthesize_residual(res_true, 0.25, 44100), clip, resolutions)
        assert loss_fit <= loss_truth + 1e-12


class TestPriorsSerialization:
    def make_priors(self):
        rng = np.random.default_rng(8)
        return PhysicsPriors(random_modes(rng, CFG, num_active=5),
                             random_residual(rng, noise_seed=2))

    def test_roundtrip(self, tmp_path):
        priors = self.make_priors()
        path = tmp_path / "p.json"
        save_priors(path, priors)
        loaded = load_priors(path)
        assert np.array_equal(loaded.modes.frequency, priors.modes.frequency)
        assert np.array_equal(loaded.modes.power, priors.modes.power)
        assert np.array_equal(loaded.modes.decay, priors.modes.decay)
        assert np.array_equal(loaded.residual.gamma, priors.residual.gamma)
        assert np.array_equal(loaded.residual.weights, priors.residual.weights)
        assert loaded.residual.noise_seed == 2
        assert loaded.modes.stft_config == priors.modes.stft_config

    def test_deterministic_bytes(self, tmp_path):
        priors = self.make_priors()
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_priors(a, priors)
        save_priors(b, priors)
        assert a.read_bytes() == b.read_bytes()

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(DataError):
            load_priors(path)
        path.write_text(json.dumps({"version": 1, "stft": {}}))
        with pytest.raises(DataError):
            load_priors(path)
        path.write_text(json.dumps({"version": 9}))
        with pytest.raises(DataError):
            load_priors(path)


class TestBandCache:
    def test_cache_consistency(self):
        # cached decomposition must equal a fresh straight computation
        params = ResidualParams.zeros(44100, 30, noise_seed=11)
        params.weights[4] = 1.0
        out = synthesize_residual(params, 0.1, 44100)
        n = out.size
        noise = np.random.default_rng(11).standard_normal(n)
        bank = FilterBank(44100, band_edges=params.band_edges)
        band4 = bandpass_split(noise, bank)[4]
        assert np.allclose(out, band4, atol=1e-12)
