"""Modal analysis of impact clips: damped-sinusoid parameter estimation,
re-synthesis, encoder normalization, and interpretable edits.

Each frequency bin of the analysis spectrogram owns one mode (frequency,
initial power in dB, decay rate in dB/s). Initial phase is fixed at zero:
the struck object is at rest at t=0.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import dsp
from .dsp import DB_FLOOR, StftConfig
from .errors import DataError

if TYPE_CHECKING:
    from .residual import PhysicsPriors

# skip-threshold: a mode at the -80 dB floor has amplitude 1e-4 and is silent
_FLOOR_EPS = 1e-9
# envelope fit uses interior frames only (onset + end reflection excluded)
_FIT_FIRST_FRAME = 2
_FIT_END_MARGIN = 8
_FIT_DEPTH_DB = 30.0


@dataclass
class Mode:
    """One damped sinusoid: frequency (Hz), power (dB <= 0), decay (dB/s)."""

    frequency: float
    power: float
    decay: float


@dataclass
class ModeSet:
    """Per-bin mode parameters; arrays are indexed by spectrogram bin."""

    frequency: np.ndarray
    power: np.ndarray
    decay: np.ndarray
    stft_config: StftConfig

    def __post_init__(self):
        d = self.stft_config.num_bins
        for name in ("frequency", "power", "decay"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape != (d,):
                raise ValueError(f"{name} must have shape ({d},), got {arr.shape}")

    @classmethod
    def silent(cls, config: StftConfig = StftConfig()) -> "ModeSet":
        """All bins at the floor: p=-80 dB, decay 0, f at the bin centers."""
        centers = config.bin_centers()
        return cls(centers.copy(), np.full(config.num_bins, DB_FLOOR),
                   np.zeros(config.num_bins), config)

    @property
    def num_modes(self) -> int:
        return self.frequency.size

    def active_bins(self) -> np.ndarray:
        return np.flatnonzero(self.power > DB_FLOOR + _FLOOR_EPS)

    def set_mode(self, bin_index: int, mode: Mode) -> None:
        lo, hi = self.bin_range(bin_index)
        if not (lo <= mode.frequency < hi):
            raise ValueError(
                f"frequency {mode.frequency} Hz outside bin {bin_index} range [{lo}, {hi})"
            )
        self.frequency[bin_index] = mode.frequency
        self.power[bin_index] = mode.power
        self.decay[bin_index] = mode.decay

    def bin_range(self, bin_index: int) -> tuple[float, float]:
        res = self.stft_config.bin_resolution
        center = bin_index * res
        return center - res / 2.0, center + res / 2.0

    def copy(self) -> "ModeSet":
        return ModeSet(self.frequency.copy(), self.power.copy(),
                       self.decay.copy(), self.stft_config)


@dataclass
class NormalizedModeSet:
    """Encoder-ready mode parameters, every entry in [-1, 1]."""

    f_norm: np.ndarray
    p_norm: np.ndarray
    decay_norm: np.ndarray


def _hann_bin_response(offset_bins: np.ndarray, window: int) -> np.ndarray:
    """Magnitude response of the Hann frame window at a fractional bin
    offset, normalized to 1 at zero offset."""

    def dirichlet(d):
        x = np.pi * np.asarray(d, dtype=np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.sin(x) / (window * np.sin(x / window))
        return np.where(np.abs(d) < 1e-9, 1.0, r)

    r = (0.5 * dirichlet(offset_bins)
         + 0.25 * (dirichlet(offset_bins - 1) + dirichlet(offset_bins + 1)))
    return np.abs(r) / 0.5


def _envelope_average_db(decays: np.ndarray, config: StftConfig) -> np.ndarray:
    """dB offset read by the centered first frame of a mode decaying at
    ``decays`` dB/s: the Hann-weighted average of 10^(-lam|tau|/20).

    Evaluated on a decay grid and interpolated; the curve is smooth."""
    lam = np.maximum(decays, 0.0)
    window = dsp.hann_window(config.window_size)
    tau = np.abs(np.arange(config.window_size) - config.window_size / 2.0)
    tau /= config.sample_rate
    grid = np.linspace(0.0, max(float(lam.max()), 1.0), 256)
    env = 10.0 ** (-np.outer(grid, tau) / 20.0)
    bias_grid = 20.0 * np.log10(env @ window / window.sum())
    return np.interp(lam, grid, bias_grid)


def _peak_frequencies(clip: np.ndarray, config: StftConfig) -> np.ndarray:
    """Per-bin peak frequency from the whole-clip FFT magnitude, refined by
    quadratic interpolation in log magnitude."""
    mag = np.abs(np.fft.rfft(clip))
    fft_res = config.sample_rate / clip.size
    res = config.bin_resolution
    nyq = config.sample_rate / 2.0
    logmag = np.log(mag + 1e-300)

    freqs = np.empty(config.num_bins)
    n_fft = mag.size
    for i in range(config.num_bins):
        lo_hz = i * res - res / 2.0
        hi_hz = i * res + res / 2.0
        lo = max(int(np.ceil(lo_hz / fft_res)), 0)
        hi = min(int(np.ceil(hi_hz / fft_res)), n_fft)
        if lo >= hi:
            freqs[i] = min(max(i * res, 0.0), nyq)
            continue
        k = lo + int(np.argmax(mag[lo:hi]))
        if 0 < k < n_fft - 1:
            ym, y0, yp = logmag[k - 1], logmag[k], logmag[k + 1]
            denom = ym - 2.0 * y0 + yp
            delta = 0.5 * (ym - yp) / denom if abs(denom) > 1e-12 else 0.0
            delta = min(max(delta, -0.5), 0.5)
        else:
            delta = 0.0
        f = (k + delta) * fft_res
        freqs[i] = min(max(f, lo_hz, 0.0), hi_hz, nyq)
    return freqs


def _envelope_slopes(s_db: np.ndarray, times: np.ndarray,
                     p_raw: np.ndarray, floor_db: float) -> np.ndarray:
    """Least-squares log-envelope slope per bin over interior frames,
    restricted to the top _FIT_DEPTH_DB of each bin's decay. NaN where
    fewer than three frames qualify."""
    d, n = s_db.shape
    valid = np.zeros_like(s_db, dtype=bool)
    last = max(n - _FIT_END_MARGIN, _FIT_FIRST_FRAME + 3)
    valid[:, _FIT_FIRST_FRAME:last] = True
    valid &= s_db > floor_db + 0.25
    valid &= s_db >= (p_raw[:, None] - _FIT_DEPTH_DB)

    counts = valid.sum(axis=1)
    tm = np.where(valid, times[None, :], 0.0)
    ym = np.where(valid, s_db, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_mean = tm.sum(axis=1) / counts
        y_mean = ym.sum(axis=1) / counts
        t_dev = np.where(valid, times[None, :] - t_mean[:, None], 0.0)
        cov = (t_dev * np.where(valid, s_db - y_mean[:, None], 0.0)).sum(axis=1)
        var = (t_dev ** 2).sum(axis=1)
        slopes = cov / var
    slopes[(counts < 3) | (var <= 0)] = np.nan
    return slopes


def estimate_modes(clip, config: StftConfig = StftConfig()) -> ModeSet:
    """Estimate one damped-sinusoid mode per frequency bin of a clip.

    The clip must start at the impact onset. Per bin: frequency is the
    interpolated whole-clip FFT peak inside the bin's range; power is the
    first-frame spectrogram magnitude, corrected for window scalloping and
    for the window-averaged decay envelope; decay comes from the time the
    bin first reaches the -80 dB silence floor, or from a log-envelope
    slope fit when it never does.
    """
    x = np.asarray(clip, dtype=np.float64)
    spec = dsp.stft(x, config)
    sgram = dsp.log_magnitude(spec)
    s = sgram.data
    d, n_frames = s.shape
    times = config.frame_times(n_frames)
    clip_len = x.size / config.sample_rate

    silent_at_onset = s[:, 0] <= DB_FLOOR + _FLOOR_EPS
    if np.all(silent_at_onset):
        warnings.warn("clip is silent: all bins at the dB floor", stacklevel=2)
        return ModeSet.silent(config)

    freqs = _peak_frequencies(x, config)
    p_raw = s[:, 0]
    slopes = _envelope_slopes(s, times, p_raw, DB_FLOOR)

    # first frame at the silence floor, if any
    floored = s <= DB_FLOOR + _FLOOR_EPS
    any_floor = floored.any(axis=1)
    first_floor = np.where(any_floor, floored.argmax(axis=1), -1)

    # provisional decay just for the envelope-average power correction
    lam0 = np.where(np.isnan(slopes), 0.0, -slopes)
    never = ~any_floor | (first_floor == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_sil = (p_raw - DB_FLOOR) / np.where(first_floor > 0,
                                                times[np.maximum(first_floor, 1)], np.inf)
    lam0 = np.where(never, lam0, lam_sil)
    lam0 = np.clip(np.where(np.isfinite(lam0), lam0, 0.0), 0.0, None)

    offset = (freqs - config.bin_centers()) / config.bin_resolution
    scallop = 20.0 * np.log10(np.maximum(_hann_bin_response(offset, config.window_size), 1e-6))
    env_bias = _envelope_average_db(lam0, config)
    power = np.clip(p_raw - scallop - env_bias, DB_FLOOR, 0.0)

    # final decay: silence-crossing rule where the floor is reached,
    # envelope slope fit otherwise, crude extrapolation as a last resort
    decay = np.empty(d)
    silence_time = np.where(first_floor > 0, times[np.maximum(first_floor, 1)], np.nan)
    use_sil = any_floor & (first_floor > 0)
    decay[use_sil] = (power[use_sil] - DB_FLOOR) / silence_time[use_sil]
    fit_ok = ~use_sil & ~np.isnan(slopes)
    decay[fit_ok] = np.maximum(-slopes[fit_ok], 0.0)
    rest = ~use_sil & np.isnan(slopes)
    decay[rest] = (power[rest] - DB_FLOOR) / clip_len

    power[silent_at_onset] = DB_FLOOR
    decay[silent_at_onset] = 0.0
    return ModeSet(freqs, power, decay, config)


def synthesize_modes(modes: ModeSet, duration: float = 0.25,
                     sample_rate: int | None = None) -> np.ndarray:
    """Render the damped-sinusoid bank 10^((p - lam*t)/20) * sin(2*pi*f*t).

    Modes at the -80 dB floor (amplitude < 1e-4) are skipped.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if sample_rate is None:
        sample_rate = modes.stft_config.sample_rate
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    active = modes.active_bins()
    for start in range(0, active.size, 128):
        sel = active[start : start + 128]
        env_db = modes.power[sel, None] - np.outer(modes.decay[sel], t)
        out += (10.0 ** (env_db / 20.0)
                * np.sin(2.0 * np.pi * np.outer(modes.frequency[sel], t))).sum(axis=0)
    return out


def normalize_modes(modes: ModeSet) -> NormalizedModeSet:
    """Map mode parameters into [-1, 1] for the physics encoder.

    Frequency: distance to the bin center over half the bin resolution.
    Power: 2p/(-80) - 1. Decay: min-max over the set (constant sets map
    to the midpoint 0).
    """
    config = modes.stft_config
    half_res = config.bin_resolution / 2.0
    f_norm = np.clip((modes.frequency - config.bin_centers()) / half_res, -1.0, 1.0)
    p_norm = 2.0 * modes.power / DB_FLOOR - 1.0
    lo, hi = modes.decay.min(), modes.decay.max()
    if hi - lo <= 0:
        decay_norm = np.zeros_like(modes.decay)
    else:
        decay_norm = 2.0 * (modes.decay - lo) / (hi - lo) - 1.0
    return NormalizedModeSet(f_norm, p_norm, decay_norm)


def edit_modes(priors: "PhysicsPriors", bin_range: tuple[int, int],
               power_delta: float = 0.0, decay_scale: float = 1.0,
               zero_residual: bool = False) -> "PhysicsPriors":
    """Edit a half-open range of modes and optionally silence the residual.

    Powers shift by ``power_delta`` (clamped to [-80, 0]), decays scale by
    ``decay_scale``; everything else is returned unchanged. Identity
    arguments return an exact copy.
    """
    modes = priors.modes
    start, stop = bin_range
    if not (0 <= start < stop <= modes.num_modes):
        raise DataError(
            f"bin range [{start}, {stop}) invalid for {modes.num_modes} modes"
        )
    if decay_scale < 0:
        raise ValueError("decay_scale must be non-negative")
    new_modes = modes.copy()
    sel = slice(start, stop)
    new_modes.power[sel] = np.clip(new_modes.power[sel] + power_delta, DB_FLOOR, 0.0)
    new_modes.decay[sel] = new_modes.decay[sel] * decay_scale
    residual = priors.residual.copy()
    if zero_residual:
        residual.weights = np.zeros_like(residual.weights)
    return dataclasses.replace(priors, modes=new_modes, residual=residual)
