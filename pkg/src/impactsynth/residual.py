"""Environment residual model: exponentially decaying band-filtered noise.

The residual of a recording (background noise, reverberation) is modeled
per band as 10^(-gamma*t/20) * BPF(N(0,1)) weighted and summed over bands.
Parameters are fitted per clip by minimizing the multi-resolution STFT loss
between (modal re-synthesis + residual) and the recording; a closed-form
band-envelope fit provides the starting point, then coordinate descent
refines it.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np

from . import dsp
from .dsp import DB_FLOOR, FilterBank, StftConfig
from .errors import DataError
from .modal import ModeSet, synthesize_modes

_DESCENT_TOL = 1e-4


@dataclass
class ResidualParams:
    """Band decay rates (dB/s), non-negative band weights, and the seed of
    the Gaussian noise realization."""

    gamma: np.ndarray
    weights: np.ndarray
    band_edges: np.ndarray
    noise_seed: int = 0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.band_edges = np.asarray(self.band_edges, dtype=np.float64)
        m = self.gamma.size
        if self.weights.size != m or self.band_edges.size != m + 1:
            raise DataError(
                f"residual bands inconsistent: {m} gammas, {self.weights.size} "
                f"weights, {self.band_edges.size} edges"
            )
        if np.any(self.gamma < 0) or np.any(self.weights < 0):
            raise DataError("gamma and weights must be non-negative")

    @classmethod
    def zeros(cls, sample_rate: int, num_bands: int = 100,
              noise_seed: int = 0) -> "ResidualParams":
        bank = FilterBank(sample_rate, num_bands=num_bands)
        return cls(np.zeros(num_bands), np.zeros(num_bands),
                   bank.band_edges, noise_seed)

    @property
    def num_bands(self) -> int:
        return self.gamma.size

    def copy(self) -> "ResidualParams":
        return ResidualParams(self.gamma.copy(), self.weights.copy(),
                              self.band_edges.copy(), self.noise_seed)


@dataclass
class PhysicsPriors:
    """The full interpretable sound description: modes plus residual."""

    modes: ModeSet
    residual: ResidualParams


_BAND_CACHE: dict[tuple, np.ndarray] = {}
_BAND_CACHE_LOCK = threading.Lock()


def _noise_bands(seed: int, n: int, sample_rate: int,
                 band_edges: np.ndarray) -> np.ndarray:
    """Band decomposition of the seeded unit noise, cached per realization."""
    key = (seed, n, sample_rate, band_edges.tobytes())
    with _BAND_CACHE_LOCK:
        bands = _BAND_CACHE.get(key)
    if bands is None:
        noise = np.random.default_rng(seed).standard_normal(n)
        bank = FilterBank(sample_rate, band_edges=band_edges)
        bands = dsp.bandpass_split(noise, bank)
        with _BAND_CACHE_LOCK:
            if len(_BAND_CACHE) >= 4:
                _BAND_CACHE.pop(next(iter(_BAND_CACHE)))
            _BAND_CACHE[key] = bands
    return bands


def synthesize_residual(params: ResidualParams, duration: float,
                        sample_rate: int) -> np.ndarray:
    """Render the weighted sum of decaying noise bands.

    Deterministic for a given noise_seed; linear in the weights.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    bands = _noise_bands(params.noise_seed, n, sample_rate, params.band_edges)
    active = np.flatnonzero(params.weights > 0)
    if active.size == 0:
        return np.zeros(n)
    env = 10.0 ** (-np.outer(params.gamma[active], t) / 20.0)
    return (params.weights[active, None] * env * bands[active]).sum(axis=0)


class _LossToTarget:
    """Multi-resolution STFT loss against a fixed target, with the target
    magnitudes precomputed. Matches dsp.multires_stft_loss exactly."""

    def __init__(self, target: np.ndarray, resolutions: list[StftConfig]):
        self.resolutions = resolutions
        self.target_mags = [np.abs(dsp.stft(target, c).data) for c in resolutions]
        self.target_norms = [np.linalg.norm(m) for m in self.target_mags]
        self.target_logs = [np.log(m + 1e-7) for m in self.target_mags]

    def __call__(self, estimate: np.ndarray) -> float:
        total = 0.0
        for config, mag_t, norm_t, log_t in zip(
            self.resolutions, self.target_mags, self.target_norms, self.target_logs
        ):
            mag_e = np.abs(dsp.stft(estimate, config).data)
            denom = max(np.linalg.norm(mag_e), norm_t, 1e-300)
            total += float(np.linalg.norm(mag_e - mag_t) / denom)
            total += float(np.mean(np.abs(np.log(mag_e + 1e-7) - log_t)))
        if not np.isfinite(total):
            raise DataError("residual fit objective is non-finite (degenerate target)")
        return total


def _closed_form_init(target: np.ndarray, modal: np.ndarray, bands: np.ndarray,
                      bank: FilterBank, config: StftConfig,
                      noise_seed: int) -> ResidualParams:
    """Band-envelope line fit on the magnitude left after removing the modal
    part, calibrated against the measured level of each unit noise band."""
    mag_t = np.abs(dsp.stft(target, config).data)
    mag_m = np.abs(dsp.stft(modal, config).data)
    mag_r = np.maximum(mag_t - mag_m, 0.0)
    n_frames = mag_r.shape[1]
    times = config.frame_times(n_frames)
    rows = bank.spectrogram_bins(config)

    m_bands = bank.num_bands
    gamma = np.zeros(m_bands)
    weights = np.zeros(m_bands)
    lo, hi = 1, max(n_frames - 2, 3)
    floor_amp = 10.0 ** (DB_FLOOR / 20.0)
    for m in range(m_bands):
        if rows[m].size == 0:
            continue
        ref = np.sqrt(np.mean(np.abs(dsp.stft(bands[m], config).data[rows[m]]) ** 2))
        env = np.sqrt(np.mean(mag_r[rows[m]] ** 2, axis=0))
        env_db = 20.0 * np.log10(np.maximum(env, floor_amp))
        sel = np.arange(lo, min(hi, n_frames))
        sel = sel[env_db[sel] > DB_FLOOR + 1.0]
        if sel.size < 3 or ref <= 0:
            continue
        ts = times[sel]
        slope, icpt = np.polyfit(ts, env_db[sel], 1)
        gamma[m] = max(-slope, 0.0)
        weights[m] = 10.0 ** ((icpt - 20.0 * np.log10(ref)) / 20.0)
    return ResidualParams(gamma, weights, bank.band_edges, noise_seed)


def fit_residual(target, modes: ModeSet, init: ResidualParams | None = None,
                 noise_seed: int = 0, num_bands: int = 100,
                 resolutions: list[StftConfig] | None = None,
                 max_passes: int = 200) -> ResidualParams:
    """Fit residual parameters to a clip given its (already estimated) modes.

    Minimizes the multi-resolution STFT loss of modal-synthesis + residual
    against the clip over one fixed noise realization. Never returns
    parameters worse than the all-zero residual.
    """
    x = np.asarray(target, dtype=np.float64)
    sr = modes.stft_config.sample_rate
    duration = x.size / sr
    if resolutions is None:
        resolutions = dsp.default_loss_configs(sr)
    if init is not None:
        noise_seed = init.noise_seed
        bank = FilterBank(sr, band_edges=init.band_edges)
    else:
        bank = FilterBank(sr, num_bands=num_bands)

    modal = synthesize_modes(modes, duration, sr)
    bands = _noise_bands(noise_seed, x.size, sr, bank.band_edges)
    t = np.arange(x.size) / sr
    loss_fn = _LossToTarget(x, resolutions)

    if init is None:
        init = _closed_form_init(x, modal, bands, bank, modes.stft_config, noise_seed)

    zeros = ResidualParams(np.zeros(bank.num_bands), np.zeros(bank.num_bands),
                           bank.band_edges, noise_seed)
    loss_zero = loss_fn(modal)

    gamma = init.gamma.copy()
    weights = init.weights.copy()
    envs = 10.0 ** (-np.outer(gamma, t) / 20.0)
    contrib = weights[:, None] * envs * bands
    residual = contrib.sum(axis=0)
    loss = loss_fn(modal + residual)
    loss_init = loss

    if loss_zero < loss:
        gamma, weights = zeros.gamma.copy(), zeros.weights.copy()
        envs = 10.0 ** (-np.outer(gamma, t) / 20.0)
        contrib = weights[:, None] * envs * bands
        residual = contrib.sum(axis=0)
        loss = loss_zero

    w_step = np.full(bank.num_bands, 1.5)
    g_step = np.full(bank.num_bands, 30.0)
    stalled = np.zeros(bank.num_bands, dtype=int)

    for _ in range(max_passes):
        loss_at_pass_start = loss
        for m in range(bank.num_bands):
            if stalled[m] >= 3:
                continue
            improved = False

            w_old = weights[m]
            proposals = [w_old * w_step[m], w_old / w_step[m]]
            if w_old == 0.0:
                proposals = [1e-4, 1e-3]
            for w_new in proposals + [0.0]:
                delta = (w_new - weights[m]) * envs[m] * bands[m]
                cand = loss_fn(modal + residual + delta)
                if cand < loss - 1e-15:
                    residual = residual + delta
                    contrib[m] += delta
                    weights[m] = w_new
                    loss = cand
                    improved = True
                    break

            if weights[m] > 0:
                g_old = gamma[m]
                for g_new in (g_old + g_step[m], max(g_old - g_step[m], 0.0)):
                    if g_new == g_old:
                        continue
                    env_new = 10.0 ** (-g_new * t / 20.0)
                    new_contrib = weights[m] * env_new * bands[m]
                    delta = new_contrib - contrib[m]
                    cand = loss_fn(modal + residual + delta)
                    if cand < loss - 1e-15:
                        residual = residual + delta
                        contrib[m] = new_contrib
                        envs[m] = env_new
                        gamma[m] = g_new
                        loss = cand
                        improved = True
                        break

            if improved:
                stalled[m] = 0
                w_step[m] = min(w_step[m] * 1.2, 4.0)
                g_step[m] = min(g_step[m] * 1.2, 120.0)
            else:
                stalled[m] += 1
                w_step[m] = max(w_step[m] ** 0.5, 1.05)
                g_step[m] = max(g_step[m] * 0.5, 2.0)

        assert loss <= loss_at_pass_start  # only improving steps are accepted
        if loss_at_pass_start - loss < _DESCENT_TOL * max(loss_at_pass_start, 1e-12):
            break

    fitted = ResidualParams(gamma, weights, bank.band_edges, noise_seed)
    candidates = [(loss, fitted), (loss_init, init), (loss_zero, zeros)]
    candidates.sort(key=lambda pair: pair[0])
    return candidates[0][1]


# --- PhysicsPriors serialization (JSON schema, version 1) ---


def priors_to_dict(priors: PhysicsPriors) -> dict:
    config = priors.modes.stft_config
    return {
        "version": 1,
        "stft": {
            "sample_rate": config.sample_rate,
            "window_size": config.window_size,
            "hop_size": config.hop_size,
            "centered": config.centered,
        },
        "modes": [
            {"f": float(f), "p": float(p), "lambda": float(lam)}
            for f, p, lam in zip(priors.modes.frequency, priors.modes.power,
                                 priors.modes.decay)
        ],
        "residual": {
            "gamma": [float(g) for g in priors.residual.gamma],
            "weights": [float(w) for w in priors.residual.weights],
            "band_edges": [float(e) for e in priors.residual.band_edges],
            "noise_seed": int(priors.residual.noise_seed),
        },
    }


def priors_from_dict(payload: dict) -> PhysicsPriors:
    try:
        if payload["version"] != 1:
            raise DataError(f"unsupported priors version {payload['version']}")
        stft_cfg = payload["stft"]
        config = StftConfig(
            sample_rate=int(stft_cfg["sample_rate"]),
            window_size=int(stft_cfg["window_size"]),
            hop_size=int(stft_cfg["hop_size"]),
            centered=bool(stft_cfg.get("centered", True)),
        )
        entries = payload["modes"]
        modes = ModeSet(
            np.array([e["f"] for e in entries], dtype=np.float64),
            np.array([e["p"] for e in entries], dtype=np.float64),
            np.array([e["lambda"] for e in entries], dtype=np.float64),
            config,
        )
        res = payload["residual"]
        residual = ResidualParams(
            np.array(res["gamma"], dtype=np.float64),
            np.array(res["weights"], dtype=np.float64),
            np.array(res["band_edges"], dtype=np.float64),
            int(res.get("noise_seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed physics priors: {exc}") from exc
    return PhysicsPriors(modes, residual)


def save_priors(path, priors: PhysicsPriors) -> None:
    from .io import atomic_write_bytes

    text = json.dumps(priors_to_dict(priors), indent=2, sort_keys=True)
    atomic_write_bytes(path, text.encode())


def load_priors(path) -> PhysicsPriors:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load priors from {path}: {exc}") from exc
    return priors_from_dict(payload)
