"""Conditional DDPM machinery: noise schedule, forward corruption,
noise-prediction training objective, and the ancestral sampler with a
temperature-scaled variance.

Two denoisers are provided. ToyDenoiser is a trainable two-layer perceptron
with hand-derived gradients, conditioned on the physics and visual latents;
it stands in for the full U-Net at desk scale (the reference architecture:
four resolution levels of two convolutional residual blocks plus spatial
attention each, channels 1 -> 64/128/256/512, sinusoidal time embedding
added per block -- documented here, not built). UnitGaussianDenoiser is the
closed-form optimal noise predictor for standard-normal data and verifies
the sampler end-to-end without any training.

Spectrograms enter diffusion affinely mapped from [-80, 0] dB to [-1, 1].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import DB_FLOOR
from .errors import DataError
from .io import atomic_write_bytes, read_pdt, write_pdt


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha/alpha_bar tables for t = 1..T."""

    kind: str
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta values must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", 1.0 - beta)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - beta))
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def num_steps(self) -> int:
        return self.beta.size

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha with the t=0 convention alpha_bar(0) = 1."""
        if not 0 <= t <= self.num_steps:
            raise ValueError(f"step {t} outside [0, {self.num_steps}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(kind: str = "cosine", num_steps: int = 1000) -> NoiseSchedule:
    """Build a noise schedule.

    cosine: alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2)
    with s = 0.008 and betas clipped to 0.999. linear: betas spaced over
    [1e-4, 0.02] scaled by 1000/T so total corruption is T-independent.
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if kind == "cosine":
        s = 0.008
        t = np.arange(num_steps + 1)
        f = np.cos(((t / num_steps + s) / (1 + s)) * np.pi / 2.0) ** 2
        bar = f / f[0]
        beta = 1.0 - bar[1:] / bar[:-1]
    elif kind == "linear":
        scale = 1000.0 / num_steps
        if num_steps == 1:
            beta = np.array([0.02 * scale])
        else:
            beta = np.linspace(1e-4 * scale, 0.02 * scale, num_steps)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    beta = np.clip(beta, 1e-8, 0.999)
    return NoiseSchedule(kind, beta)


@dataclass
class ConditionPair:
    """Conditioning latents: 256-d physics vector and the visual vector."""

    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).ravel()
        self.nu = np.asarray(self.nu, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.nu))):
            raise DataError("condition latents contain non-finite entries")


def forward_sample(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    abar = schedule.alpha_bar_at(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def sinusoidal_time_embedding(t: int, dim: int) -> np.ndarray:
    """Standard sin/cos embedding of a diffusion step index."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


class UnitGaussianDenoiser:
    """Optimal noise predictor when x0 ~ N(0, I): eps_hat = sqrt(1-abar_t)*x.

    Lets the sampler be verified against known moments with no training.
    """

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    def predict(self, x_t, t: int, cond: ConditionPair | None = None) -> np.ndarray:
        return np.sqrt(1.0 - self.schedule.alpha_bar_at(t)) * np.asarray(x_t)


class ToyDenoiser:
    """Two-layer perceptron over [flattened input, time embedding, mu, nu],
    added to the analytic sqrt(1-abar_t)*x_t noise baseline.

    With zero weights the model is exactly the unit-Gaussian-optimal
    predictor, so the reverse chain stays contractive and training only has
    to learn the data- and condition-dependent correction. Parameters are
    float64; gradients are hand-derived and match central finite
    differences (the baseline carries no parameters).
    """

    def __init__(self, input_shape, schedule: NoiseSchedule,
                 mu_dim: int = 256, nu_dim: int = 2048,
                 hidden: int = 256, time_dim: int = 32, seed: int = 0):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.schedule = schedule
        self.mu_dim = mu_dim
        self.nu_dim = nu_dim
        self.hidden = hidden
        self.time_dim = time_dim
        self.seed = seed
        n_out = int(np.prod(self.input_shape))
        n_in = n_out + time_dim + mu_dim + nu_dim
        rng = np.random.default_rng(seed)
        self.params = {
            "W1": rng.standard_normal((hidden, n_in)) / np.sqrt(n_in),
            "b1": np.zeros(hidden),
            "W2": 0.01 * rng.standard_normal((n_out, hidden)) / np.sqrt(hidden),
            "b2": np.zeros(n_out),
        }

    def _features(self, x_t, t: int, cond: ConditionPair) -> np.ndarray:
        x = np.asarray(x_t, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ValueError(f"input shape {x.shape} != {self.input_shape}")
        if cond.mu.size != self.mu_dim or cond.nu.size != self.nu_dim:
            raise ValueError(
                f"condition dims ({cond.mu.size}, {cond.nu.size}) != "
                f"({self.mu_dim}, {self.nu_dim})"
            )
        # schedule-length-invariant embedding: t rescaled to a 1000-step axis
        t_scaled = t * (1000.0 / self.schedule.num_steps)
        return np.concatenate(
            [x.ravel(), sinusoidal_time_embedding(t_scaled, self.time_dim),
             cond.mu, cond.nu]
        )

    def _forward(self, x_t, t: int, features):
        pre = self.params["W1"] @ features + self.params["b1"]
        h = np.tanh(pre)
        baseline = np.sqrt(1.0 - self.schedule.alpha_bar_at(t)) * \
            np.asarray(x_t, dtype=np.float64).ravel()
        out = baseline + self.params["W2"] @ h + self.params["b2"]
        return out, h

    def predict(self, x_t, t: int, cond: ConditionPair) -> np.ndarray:
        features = self._features(x_t, t, cond)
        out, _ = self._forward(x_t, t, features)
        return out.reshape(self.input_shape)

    def predict_and_vjp(self, x_t, t: int, cond: ConditionPair):
        """Prediction plus a pullback mapping d(loss)/d(output) to parameter
        gradients, reusing the forward activations."""
        features = self._features(x_t, t, cond)
        out, h = self._forward(x_t, t, features)

        def vjp(grad_out):
            g = np.asarray(grad_out, dtype=np.float64).ravel()
            grad_h = self.params["W2"].T @ g
            grad_pre = grad_h * (1.0 - h * h)
            return {
                "W2": np.outer(g, h),
                "b2": g,
                "W1": np.outer(grad_pre, features),
                "b1": grad_pre,
            }

        return out.reshape(self.input_shape), vjp


def training_loss(denoiser, x0, cond: ConditionPair, schedule: NoiseSchedule,
                  rng: np.random.Generator, with_grads: bool = False):
    """One-draw noise-prediction objective: mean |eps - eps_hat| at a step
    sampled uniformly from 1..T.

    Returns (loss, grads); grads is None unless requested and the denoiser
    exposes predict_with_grads.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = int(rng.integers(1, schedule.num_steps + 1))
    eps = rng.standard_normal(x0.shape)
    x_t = forward_sample(x0, t, eps, schedule)
    if with_grads and hasattr(denoiser, "predict_and_vjp"):
        eps_hat, vjp = denoiser.predict_and_vjp(x_t, t, cond)
        diff = eps - eps_hat
        # d(mean|eps - out|)/d(out) = -sign(eps - out)/n
        grads = vjp(-np.sign(diff).ravel() / x0.size)
        return float(np.mean(np.abs(diff))), grads
    eps_hat = denoiser.predict(x_t, t, cond)
    return float(np.mean(np.abs(eps - eps_hat))), None


def sample(denoiser, cond: ConditionPair | None, schedule: NoiseSchedule,
           eta: float = 1.0, rng: np.random.Generator | None = None,
           shape=None, x_start=None) -> np.ndarray:
    """Ancestral sampling: iteratively remove the predicted noise.

    x_{t-1} = (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat)/sqrt(a_t) + sigma_t z,
    sigma_t = eta * sqrt((1-abar_{t-1})/(1-abar_t) * beta_t), z = 0 at t = 1.
    Deterministic given x_start and eta = 0.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta > 0 and schedule.num_steps > 1 and rng is None:
        raise ValueError("eta > 0 sampling needs an rng")
    if x_start is not None:
        x = np.array(x_start, dtype=np.float64)
    else:
        if rng is None or shape is None:
            raise ValueError("need shape and rng when x_start is not given")
        x = rng.standard_normal(shape)
    for t in range(schedule.num_steps, 0, -1):
        abar_t = schedule.alpha_bar_at(t)
        abar_prev = schedule.alpha_bar_at(t - 1)
        alpha_t = float(schedule.alpha[t - 1])
        beta_t = float(schedule.beta[t - 1])
        eps_hat = denoiser.predict(x, t, cond)
        x = (x - (1.0 - alpha_t) / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(alpha_t)
        if t > 1 and eta > 0:
            sigma = eta * np.sqrt((1.0 - abar_prev) / (1.0 - abar_t) * beta_t)
            x = x + sigma * rng.standard_normal(x.shape)
    return x


def train_toy(dataset, epochs: int, lr: float, denoiser: ToyDenoiser,
              schedule: NoiseSchedule, seed: int = 0):
    """SGD on the noise-prediction loss over (x0, cond) pairs.

    Returns (denoiser, per-epoch mean loss). Aborts with diagnostics if the
    loss goes non-finite.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    rng = np.random.default_rng(seed)
    history = np.empty(epochs)
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for idx in order:
            x0, cond = dataset[idx]
            loss, grads = training_loss(denoiser, x0, cond, schedule, rng,
                                        with_grads=True)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"toy training diverged: non-finite loss at epoch {epoch}, "
                    f"sample {idx} (lr={lr})"
                )
            losses.append(loss)
            if lr != 0.0:
                for name, grad in grads.items():
                    denoiser.params[name] -= lr * grad
        history[epoch] = float(np.mean(losses))
    return denoiser, history


def spectrogram_to_unit(db_values: np.ndarray) -> np.ndarray:
    """Affine map [-80, 0] dB -> [-1, 1]."""
    return (np.asarray(db_values, dtype=np.float64) - DB_FLOOR) / (-DB_FLOOR / 2.0) - 1.0


def unit_to_spectrogram(unit_values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`spectrogram_to_unit`, clamped to [-80, 0] dB."""
    x = np.clip(np.asarray(unit_values, dtype=np.float64), -1.0, 1.0)
    return (x + 1.0) * (-DB_FLOOR / 2.0) + DB_FLOOR


def save_checkpoint(path, denoiser: ToyDenoiser, schedule: NoiseSchedule,
                    meta: dict | None = None) -> None:
    """Write a JSON manifest plus one PDT1 tensor per parameter.

    ``meta`` carries pipeline context (encoder scaling, STFT geometry).
    """
    base = os.path.basename(path)
    manifest = {
        "format": "impactsynth-checkpoint",
        "version": 1,
        "schedule": {"kind": schedule.kind, "steps": schedule.num_steps},
        "denoiser": {
            "input_shape": list(denoiser.input_shape),
            "mu_dim": denoiser.mu_dim,
            "nu_dim": denoiser.nu_dim,
            "hidden": denoiser.hidden,
            "time_dim": denoiser.time_dim,
            "seed": denoiser.seed,
        },
        "params": {name: f"{base}.{name}.pdt1" for name in denoiser.params},
        "meta": meta or {},
    }
    for name, value in denoiser.params.items():
        write_pdt(f"{path}.{name}.pdt1", value)
    atomic_write_bytes(path, json.dumps(manifest, indent=2, sort_keys=True).encode())


def load_checkpoint(path):
    """Load (denoiser, schedule, meta) from a checkpoint manifest."""
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc
    if manifest.get("format") != "impactsynth-checkpoint":
        raise DataError(f"{path}: not an impactsynth checkpoint")
    schedule = make_schedule(manifest["schedule"]["kind"],
                             manifest["schedule"]["steps"])
    spec = manifest["denoiser"]
    denoiser = ToyDenoiser(
        tuple(spec["input_shape"]), schedule,
        mu_dim=spec["mu_dim"], nu_dim=spec["nu_dim"],
        hidden=spec["hidden"], time_dim=spec["time_dim"], seed=spec["seed"],
    )
    directory = os.path.dirname(os.path.abspath(path))
    for name, rel in manifest["params"].items():
        value = read_pdt(os.path.join(directory, rel)).astype(np.float64)
        if value.shape != denoiser.params[name].shape:
            raise DataError(f"{path}: parameter {name} has shape {value.shape}, "
                            f"expected {denoiser.params[name].shape}")
        denoiser.params[name] = value
    return denoiser, schedule, manifest.get("meta", {})
