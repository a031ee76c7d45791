import numpy as np
import pytest

from impactsynth import (DataError, Mode, ModeSet, PhysicsPriors,
                         ResidualParams, StftConfig, edit_modes,
                         estimate_modes, log_magnitude, normalize_modes,
                         stft, synthesize_modes)
from impactsynth.synthetic import random_modes

CFG = StftConfig()


def five_mode_set():
    modes = ModeSet.silent(CFG)
    placements = [(23, 500.0, -6.0, 80.0), (60, 1290.0, -12.0, 150.0),
                  (131, 2820.5, -18.0, 220.0), (245, 5271.0, -24.0, 300.0),
                  (400, 8613.3, -15.0, 390.0)]
    for b, f, p, lam in placements:
        modes.set_mode(b, Mode(f, p, lam))
    return modes, placements


class TestSynthesize:
    def test_unit_sinusoid(self):
        modes = ModeSet.silent(CFG)
        k = int(round(1000.0 / CFG.bin_resolution))
        modes.set_mode(k, Mode(1000.0, 0.0, 0.0))
        wave = synthesize_modes(modes, 0.25)
        assert 0.999 <= np.abs(wave).max() <= 1.0

    def test_decay_envelope_at_known_time(self):
        modes = ModeSet.silent(CFG)
        k = int(round(1000.0 / CFG.bin_resolution))
        modes.set_mode(k, Mode(1000.0, 0.0, 160.0))
        wave = synthesize_modes(modes, 0.25)
        # at t = 0.125 s the envelope is -20 dB = 0.1; read it where the
        # carrier is near its peak so the ratio is the envelope (window
        # +-0.4 ms keeps the envelope's own drift under 0.8%)
        t = np.arange(wave.size) / CFG.sample_rate
        carrier = np.sin(2 * np.pi * 1000.0 * t)
        near = (np.abs(carrier) > 0.99) & (np.abs(t - 0.125) < 0.0004)
        assert near.any()
        ratio = np.abs(wave[near] / carrier[near])
        assert np.all(np.abs(ratio / 0.1 - 1.0) < 0.01)

    def test_floor_modes_are_skipped(self):
        wave = synthesize_modes(ModeSet.silent(CFG), 0.25)
        assert np.abs(wave).max() < 1e-3
        assert np.all(wave == 0)

    def test_duration_validation(self):
        with pytest.raises(ValueError):
            synthesize_modes(ModeSet.silent(CFG), duration=0.0)


class TestEstimate:
    def test_five_known_modes(self):
        modes, placements = five_mode_set()
        est = estimate_modes(synthesize_modes(modes, 0.25), CFG)
        for b, f, p, lam in placements:
            assert abs(est.frequency[b] - f) <= CFG.bin_resolution
            assert abs(est.power[b] - p) <= 3.0
            assert abs(est.decay[b] - lam) / lam <= 0.15

    def test_silent_clip(self):
        with pytest.warns(UserWarning):
            est = estimate_modes(np.zeros(11025), CFG)
        assert np.all(est.power == -80.0)
        assert np.all(est.decay == 0.0)

    def test_silence_crossing_rule(self):
        # p=0 dB, lam=320 dB/s hits -80 dB exactly at the 0.25 s clip end
        t = np.arange(11025) / 44100
        clip = 10 ** ((0.0 - 320.0 * t) / 20) * np.sin(2 * np.pi * 441.0 * t)
        est = estimate_modes(clip, CFG)
        k = int(round(441.0 / CFG.bin_resolution))
        assert abs(est.decay[k] - 320.0) / 320.0 <= 0.15
        assert abs(est.power[k]) <= 1.0

    def test_roundtrip_property_30_sets(self):
        rng = np.random.default_rng(123)
        good = total = 0
        for _ in range(30):
            modes = random_modes(rng, CFG, num_active=int(rng.integers(3, 12)))
            est = estimate_modes(synthesize_modes(modes, 0.25), CFG)
            for b in modes.active_bins():
                total += 1
                ok = (abs(est.frequency[b] - modes.frequency[b]) <= CFG.bin_resolution
                      and abs(est.power[b] - modes.power[b]) <= 3.0
                      and abs(est.decay[b] - modes.decay[b]) / modes.decay[b] <= 0.15)
                good += ok
        assert good / total >= 0.95

    def test_envelope_law_linear_decay(self):
        modes = ModeSet.silent(CFG)
        k = 60
        lam = 120.0
        modes.set_mode(k, Mode(k * CFG.bin_resolution, -5.0, lam))
        wave = synthesize_modes(modes, 0.25)
        sgram = log_magnitude(stft(wave, CFG))
        env = sgram.data[k]
        times = CFG.frame_times(env.size)
        sel = slice(2, env.size - 8)
        coeffs = np.polyfit(times[sel], env[sel], 1)
        fitted_line = np.polyval(coeffs, times[sel])
        assert abs(-coeffs[0] - lam) / lam < 0.05
        assert np.max(np.abs(env[sel] - fitted_line)) < 1.0


class TestNormalize:
    def test_reference_points(self):
        modes = ModeSet.silent(CFG)
        modes.power[:] = -40.0
        norm = normalize_modes(modes)
        assert np.all(norm.f_norm == 0.0)     # frequencies at bin centers
        assert np.all(norm.p_norm == 0.0)     # -40 dB is the midpoint
        assert np.all(norm.decay_norm == 0.0)  # degenerate min-max

    def test_ranges_and_monotonicity(self):
        rng = np.random.default_rng(5)
        modes = random_modes(rng, CFG, num_active=20)
        norm = normalize_modes(modes)
        for arr in (norm.f_norm, norm.p_norm, norm.decay_norm):
            assert np.all(arr >= -1.0) and np.all(arr <= 1.0)
        # p_norm affine and strictly monotone in p
        p = np.array([-70.0, -40.0, -10.0])
        mapped = 2.0 * p / -80.0 - 1.0
        assert np.all(np.diff(mapped) < 0)
        delta = np.diff(mapped) / np.diff(p)
        assert np.allclose(delta, delta[0])


class TestEdit:
    def make_priors(self):
        rng = np.random.default_rng(9)
        modes = random_modes(rng, CFG, num_active=10, bin_span=(4, 500),
                             power_range=(-40.0, -10.0))
        res = ResidualParams.zeros(CFG.sample_rate, 100)
        res.weights[5] = 0.01
        res.gamma[5] = 100.0
        return PhysicsPriors(modes, res)

    def test_identity_edit_is_exact(self):
        priors = self.make_priors()
        out = edit_modes(priors, (0, 201), power_delta=0.0, decay_scale=1.0,
                         zero_residual=False)
        assert np.array_equal(out.modes.frequency, priors.modes.frequency)
        assert np.array_equal(out.modes.power, priors.modes.power)
        assert np.array_equal(out.modes.decay, priors.modes.decay)
        assert np.array_equal(out.residual.weights, priors.residual.weights)
        assert np.array_equal(out.residual.gamma, priors.residual.gamma)

    def test_silencing_edit(self):
        priors = self.make_priors()
        out = edit_modes(priors, (0, 201), power_delta=-80.0)
        assert np.all(out.modes.power[:201] == -80.0)
        assert np.array_equal(out.modes.power[201:], priors.modes.power[201:])

    def test_low_frequency_removal_recipe(self):
        priors = self.make_priors()
        out = edit_modes(priors, (0, 201), power_delta=-20.0, decay_scale=1.5,
                         zero_residual=True)
        assert np.all(out.residual.weights == 0.0)

        def band_energy(p):
            wave = synthesize_modes(p.modes, 0.25)
            sgram = log_magnitude(stft(wave, CFG))
            return np.sum(10.0 ** (sgram.data[:201] / 10.0))

        assert band_energy(out) < band_energy(priors)

    def test_input_not_mutated(self):
        priors = self.make_priors()
        before = priors.modes.power.copy()
        edit_modes(priors, (0, 100), power_delta=-30.0, zero_residual=True)
        assert np.array_equal(priors.modes.power, before)
        assert np.any(priors.residual.weights > 0)

    def test_range_validation(self):
        priors = self.make_priors()
        with pytest.raises(DataError):
            edit_modes(priors, (0, 3000))
        with pytest.raises(DataError):
            edit_modes(priors, (10, 10))
        with pytest.raises(ValueError):
            edit_modes(priors, (0, 10), decay_scale=-1.0)


class TestModeSet:
    def test_set_mode_rejects_wrong_bin(self):
        modes = ModeSet.silent(CFG)
        with pytest.raises(ValueError):
            modes.set_mode(10, Mode(5000.0, -10.0, 100.0))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ModeSet(np.zeros(3), np.zeros(3), np.zeros(3), CFG)
