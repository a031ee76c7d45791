import numpy as np
import pytest

from impactsynth import (ConditionPair, ToyDenoiser, UnitGaussianDenoiser,
                         forward_sample, make_schedule, sample, train_toy,
                         training_loss)
from impactsynth.diffusion import (load_checkpoint, save_checkpoint,
                                   sinusoidal_time_embedding,
                                   spectrogram_to_unit, unit_to_spectrogram)


class _StubDenoiser:
    def __init__(self, fn):
        self.fn = fn

    def predict(self, x_t, t, cond):
        return self.fn(x_t, t)


def tiny_toy(seed=1, schedule=None):
    schedule = schedule or make_schedule("cosine", 50)
    return ToyDenoiser((4, 4), schedule, mu_dim=8, nu_dim=8, hidden=16,
                       seed=seed), schedule


def tiny_cond():
    return ConditionPair(np.linspace(-1, 1, 8), np.linspace(1, -1, 8))


class TestSchedule:
    @pytest.mark.parametrize("kind", ["cosine", "linear"])
    @pytest.mark.parametrize("steps", [1, 10, 100, 1000])
    def test_invariants(self, kind, steps):
        sched = make_schedule(kind, steps)
        assert sched.num_steps == steps
        assert np.all(sched.beta > 0) and np.all(sched.beta < 1)
        assert np.all(np.diff(sched.alpha_bar) < 0) or steps == 1
        assert sched.alpha_bar[-1] <= 1e-3 * (1 + 1e-9)

    def test_cosine_1000_endpoints(self):
        sched = make_schedule("cosine", 1000)
        assert sched.alpha_bar[0] >= 0.999
        assert sched.alpha_bar[-1] <= 1e-3

    def test_alpha_bar_consistency(self):
        sched = make_schedule("cosine", 500)
        recomputed = np.cumprod(1.0 - sched.beta)
        assert np.max(np.abs(recomputed - sched.alpha_bar)) <= 1e-12

    def test_single_step_beta_in_range(self):
        for kind in ("cosine", "linear"):
            sched = make_schedule(kind, 1)
            assert 0 < sched.beta[0] < 1

    def test_validation(self):
        with pytest.raises(ValueError):
            make_schedule("cosine", 0)
        with pytest.raises(ValueError):
            make_schedule("quadratic", 10)


class TestForwardSample:
    def test_identity_at_t0(self):
        sched = make_schedule("cosine", 100)
        x0 = np.arange(6.0).reshape(2, 3)
        eps = np.ones_like(x0)
        assert np.array_equal(forward_sample(x0, 0, eps, sched), x0)

    def test_pure_noise_at_final_step(self):
        sched = make_schedule("cosine", 1000)
        x0 = np.full(8, 3.0)
        eps = np.random.default_rng(0).standard_normal(8)
        xt = forward_sample(x0, 1000, eps, sched)
        assert np.allclose(xt, eps, atol=1e-3)

    def test_shape_and_range_validation(self):
        sched = make_schedule("cosine", 10)
        with pytest.raises(ValueError):
            forward_sample(np.zeros(3), 1, np.zeros(4), sched)
        with pytest.raises(ValueError):
            forward_sample(np.zeros(3), 11, np.zeros(3), sched)

    def test_chained_transitions_match_closed_form(self):
        # Monte-Carlo equivalence of the step-by-step Markov corruption
        sched = make_schedule("cosine", 100)
        rng = np.random.default_rng(42)
        x0 = np.array([0.5, -1.0, 2.0, 0.0])
        trials = 10_000
        t_target = 10
        x = np.tile(x0, (trials, 1))
        for t in range(1, t_target + 1):
            beta = sched.beta[t - 1]
            x = np.sqrt(1 - beta) * x + np.sqrt(beta) * rng.standard_normal(x.shape)
        abar = sched.alpha_bar_at(t_target)
        se_mean = np.sqrt(1 - abar) / np.sqrt(trials)
        se_var = (1 - abar) * np.sqrt(2.0 / (trials - 1))
        assert np.all(np.abs(x.mean(axis=0) - np.sqrt(abar) * x0) < 3 * se_mean)
        assert np.all(np.abs(x.var(axis=0, ddof=1) - (1 - abar)) < 3 * se_var)


class TestTrainingLoss:
    def test_perfect_predictor_zero_loss(self):
        sched = make_schedule("cosine", 100)
        x0 = np.zeros((3, 3))
        # with x0 = 0 and abar < 1, x_t = sqrt(1-abar) eps, so eps is
        # recoverable exactly by the stub
        stub = _StubDenoiser(
            lambda x, t: x / np.sqrt(1 - sched.alpha_bar_at(t)))
        loss, grads = training_loss(stub, x0, None, sched,
                                    np.random.default_rng(0))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert grads is None

    def test_zero_predictor_matches_half_normal_mean(self):
        sched = make_schedule("cosine", 100)
        stub = _StubDenoiser(lambda x, t: np.zeros_like(x))
        rng = np.random.default_rng(3)
        x0 = np.zeros(16)
        losses = [training_loss(stub, x0, None, sched, rng)[0]
                  for _ in range(10_000)]
        expected = np.sqrt(2.0 / np.pi)
        assert abs(np.mean(losses) - expected) / expected < 0.05

    def test_toy_gradients_match_finite_differences(self):
        toy, sched = tiny_toy()
        cond = tiny_cond()
        x0 = np.random.default_rng(5).standard_normal((4, 4)) * 0.5
        seed = 11
        loss, grads = training_loss(toy, x0, cond, sched,
                                    np.random.default_rng(seed), with_grads=True)

        def loss_with(name, idx, delta):
            toy.params[name][idx] += delta
            value, _ = training_loss(toy, x0, cond, sched,
                                     np.random.default_rng(seed))
            toy.params[name][idx] -= delta
            return value

        rng = np.random.default_rng(9)
        h = 1e-5
        for _ in range(20):
            name = rng.choice(list(toy.params))
            idx = tuple(rng.integers(0, s) for s in toy.params[name].shape)
            fd = (loss_with(name, idx, h) - loss_with(name, idx, -h)) / (2 * h)
            an = grads[name][idx]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-12) < 1e-4


class TestSampler:
    def test_eta_zero_is_bit_deterministic(self):
        sched = make_schedule("cosine", 200)
        den = UnitGaussianDenoiser(sched)
        x_start = np.random.default_rng(7).standard_normal(5)
        a = sample(den, None, sched, eta=0.0, x_start=x_start)
        b = sample(den, None, sched, eta=0.0, x_start=x_start)
        assert np.array_equal(a, b)

    def test_gaussian_moments_with_analytic_denoiser(self):
        sched = make_schedule("cosine", 1000)
        den = UnitGaussianDenoiser(sched)
        rng = np.random.default_rng(123)
        # 2000 independent 4-d samples drawn as one elementwise batch
        out = sample(den, None, sched, eta=1.0, rng=rng, shape=(2000, 4))
        assert np.all(np.abs(out.mean(axis=0)) < 0.1)
        assert np.all((out.var(axis=0) > 0.85) & (out.var(axis=0) < 1.15))

    def test_single_step_reduces_to_closed_form(self):
        sched = make_schedule("cosine", 1)
        den = UnitGaussianDenoiser(sched)
        x1 = np.array([0.3, -1.2, 0.8])
        out = sample(den, None, sched, eta=1.0, rng=np.random.default_rng(0),
                     x_start=x1)
        abar1 = sched.alpha_bar_at(1)
        expect = (x1 - np.sqrt(1 - abar1) * den.predict(x1, 1)) / \
            np.sqrt(sched.alpha[0])
        assert np.allclose(out, expect, atol=1e-12)

    def test_validation(self):
        sched = make_schedule("cosine", 10)
        den = UnitGaussianDenoiser(sched)
        with pytest.raises(ValueError):
            sample(den, None, sched, eta=-1.0, x_start=np.zeros(3))
        with pytest.raises(ValueError):
            sample(den, None, sched, eta=1.0, x_start=np.zeros(3))  # no rng
        with pytest.raises(ValueError):
            sample(den, None, sched, eta=0.0)  # no shape/x_start


class TestToyTraining:
    def make_dataset(self, rng):
        mu0, mu1 = rng.standard_normal(8), rng.standard_normal(8)
        nu0, nu1 = rng.standard_normal(8), rng.standard_normal(8)
        data = []
        for i in range(6):
            m = i % 2
            x0 = np.clip(rng.standard_normal((4, 4)) * 0.3 + (m - 0.5), -1, 1)
            data.append((x0, ConditionPair(mu0 if m == 0 else mu1,
                                           nu0 if m == 0 else nu1)))
        return data

    def test_lr_zero_keeps_parameters(self):
        toy, sched = tiny_toy()
        before = {k: v.copy() for k, v in toy.params.items()}
        dataset = self.make_dataset(np.random.default_rng(1))
        _, history = train_toy(dataset, epochs=3, lr=0.0, denoiser=toy,
                               schedule=sched, seed=0)
        for name in before:
            assert np.array_equal(toy.params[name], before[name])
        assert history.shape == (3,)

    def test_same_seed_gives_identical_parameters(self):
        dataset = self.make_dataset(np.random.default_rng(1))
        out = []
        for _ in range(2):
            toy, sched = tiny_toy(seed=4)
            toy, _ = train_toy(dataset, epochs=5, lr=0.05, denoiser=toy,
                               schedule=sched, seed=2)
            out.append({k: v.copy() for k, v in toy.params.items()})
        for name in out[0]:
            assert np.array_equal(out[0][name], out[1][name])

    def test_training_improves_on_zero_predictor_baseline(self):
        dataset = self.make_dataset(np.random.default_rng(1))
        toy, sched = tiny_toy(seed=3)
        toy, _ = train_toy(dataset, epochs=400, lr=0.05, denoiser=toy,
                           schedule=sched, seed=5)
        ev = np.random.default_rng(99)
        losses = [training_loss(toy, x0, cond, sched, ev)[0]
                  for _ in range(30) for x0, cond in dataset]
        assert np.mean(losses) < 0.8 * np.sqrt(2 / np.pi)

    def test_divergence_aborts(self):
        dataset = self.make_dataset(np.random.default_rng(1))
        toy, sched = tiny_toy()
        with np.errstate(over="ignore"), pytest.raises(RuntimeError,
                                                       match="diverged"):
            train_toy(dataset, epochs=3, lr=1e308, denoiser=toy,
                      schedule=sched, seed=0)

    def test_empty_dataset_rejected(self):
        from impactsynth import DataError

        toy, sched = tiny_toy()
        with pytest.raises(DataError):
            train_toy([], epochs=1, lr=0.1, denoiser=toy, schedule=sched)

    def test_condition_sensitivity_after_training(self):
        dataset = self.make_dataset(np.random.default_rng(1))
        toy, sched = tiny_toy(seed=3)
        toy, _ = train_toy(dataset, epochs=200, lr=0.05, denoiser=toy,
                           schedule=sched, seed=5)
        x_start = np.random.default_rng(8).standard_normal((4, 4))
        s0 = sample(toy, dataset[0][1], sched, eta=0.0, x_start=x_start)
        s1 = sample(toy, dataset[1][1], sched, eta=0.0, x_start=x_start)
        assert np.linalg.norm(s0 - s1) > 0


class TestCheckpointAndScaling:
    def test_checkpoint_roundtrip(self, tmp_path):
        toy, sched = tiny_toy(seed=6)
        toy.params["b2"] += 0.25
        path = str(tmp_path / "ckpt.json")
        save_checkpoint(path, toy, sched, meta={"stft": {"sample_rate": 44100}})
        loaded, sched2, meta = load_checkpoint(path)
        assert sched2.kind == sched.kind and sched2.num_steps == sched.num_steps
        assert meta["stft"]["sample_rate"] == 44100
        for name in toy.params:
            assert np.array_equal(loaded.params[name],
                                  toy.params[name].astype(np.float32))
        x = np.random.default_rng(0).standard_normal((4, 4))
        cond = tiny_cond()
        assert np.allclose(loaded.predict(x, 5, cond), toy.predict(x, 5, cond),
                           atol=1e-5)

    def test_db_unit_mapping(self):
        db = np.array([-80.0, -40.0, 0.0])
        unit = spectrogram_to_unit(db)
        assert np.allclose(unit, [-1.0, 0.0, 1.0])
        assert np.allclose(unit_to_spectrogram(unit), db)
        assert np.all(unit_to_spectrogram(np.array([-5.0, 5.0])) == [-80.0, 0.0])

    def test_time_embedding(self):
        emb = sinusoidal_time_embedding(17, 32)
        assert emb.shape == (32,)
        assert np.all(np.isfinite(emb))
        assert not np.array_equal(emb, sinusoidal_time_embedding(18, 32))
