"""Deterministic DSP primitives shared by the whole package.

Centered Hann STFT / least-squares inverse, log-magnitude spectrograms,
Griffin-Lim phase reconstruction, a brickwall FFT filter bank, and the
multi-resolution STFT loss.

STFT coefficients are scaled by 2/sum(window) so that a unit-amplitude
sinusoid at a bin center reads magnitude ~1.0 (0 dB). The inverse applies
the exact reciprocal scaling, so roundtrips are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DB_FLOOR = -80.0


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (COLA-compatible for hop = length/4)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


@dataclass(frozen=True)
class StftConfig:
    """Analysis configuration: 44.1 kHz, 2048-sample Hann window, 256 hop."""

    sample_rate: int = 44100
    window_size: int = 2048
    hop_size: int = 256
    window: str = "hann"
    centered: bool = True

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        w, h = self.window_size, self.hop_size
        if w < 2 or (w & (w - 1)) != 0:
            raise ValueError(f"window_size must be a power of two, got {w}")
        if h < 1 or w % h != 0:
            raise ValueError(f"hop_size must divide window_size ({h} vs {w})")
        if self.window != "hann":
            raise ValueError(f"only the hann window is supported, got {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.window_size // 2 + 1

    @property
    def bin_resolution(self) -> float:
        """Frequency width of one bin in Hz (~21.5 Hz at defaults)."""
        return self.sample_rate / self.window_size

    def num_frames(self, num_samples: int) -> int:
        return num_samples // self.hop_size + 1

    def frame_times(self, num_frames: int) -> np.ndarray:
        return np.arange(num_frames) * self.hop_size / self.sample_rate

    def bin_centers(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.bin_resolution


@dataclass
class ComplexSpectrum:
    """Complex STFT grid, shape (bins, frames)."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.config.num_bins:
            raise ValueError(
                f"spectrum shape {self.data.shape} does not match config "
                f"({self.config.num_bins} bins)"
            )


@dataclass
class Spectrogram:
    """Log-magnitude STFT grid in dB (reference amplitude 1.0), floored."""

    data: np.ndarray
    config: StftConfig
    floor_db: float = DB_FLOOR

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.config.num_bins:
            raise ValueError(
                f"spectrogram shape {self.data.shape} does not match config "
                f"({self.config.num_bins} bins)"
            )

    @property
    def shape(self):
        return self.data.shape


def _check_signal(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DataError("signal must be a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite samples")
    return x


def _frame(x: np.ndarray, config: StftConfig) -> np.ndarray:
    """Centered framing with odd-reflect padding; rows are frames."""
    win, hop = config.window_size, config.hop_size
    pad = win // 2 if config.centered else 0
    if config.centered:
        if x.size < pad + 1:
            raise DataError(
                f"signal too short for one centered frame "
                f"({x.size} samples < window/2+1 = {pad + 1})"
            )
        x = np.pad(x, pad, mode="reflect", reflect_type="odd")
    n_frames = config.num_frames(x.size - 2 * pad)
    starts = np.arange(n_frames) * hop
    idx = starts[:, None] + np.arange(win)[None, :]
    return x[idx]


def stft(signal, config: StftConfig = StftConfig()) -> ComplexSpectrum:
    """Short-time Fourier transform.

    Returns a (window/2+1, floor(len/hop)+1) complex grid. Coefficients are
    scaled so a unit sinusoid at a bin center peaks near magnitude 1.
    """
    x = _check_signal(signal)
    window = hann_window(config.window_size)
    frames = _frame(x, config) * window
    coeffs = np.fft.rfft(frames, axis=1) * (2.0 / window.sum())
    return ComplexSpectrum(coeffs.T.copy(), config)


def istft(spec: ComplexSpectrum, length: int | None = None) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`stft`.

    ``length`` trims/defines the output sample count; defaults to
    (frames-1)*hop, the shortest signal producing that many frames.
    """
    config = spec.config
    win, hop = config.window_size, config.hop_size
    if hop > win // 2:
        raise ValueError(f"hop {hop} > window/2 violates COLA for the Hann window")
    window = hann_window(win)
    n_frames = spec.data.shape[1]
    frames = np.fft.irfft(spec.data.T * (window.sum() / 2.0), n=win, axis=1)
    frames *= window

    pad = win // 2 if config.centered else 0
    if length is None:
        length = (n_frames - 1) * hop
    total = length + 2 * pad
    out = np.zeros(max(total, (n_frames - 1) * hop + win))
    den = np.zeros_like(out)
    wsq = window * window
    for i in range(n_frames):
        out[i * hop : i * hop + win] += frames[i]
        den[i * hop : i * hop + win] += wsq
    good = den > 1e-10 * den.max()
    out = np.where(good, out / np.where(good, den, 1.0), 0.0)
    return out[pad : pad + length]


def log_magnitude(spec: ComplexSpectrum, floor_db: float = DB_FLOOR) -> Spectrogram:
    """20*log10(|coefficient|) clamped below at ``floor_db``."""
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    mag = np.abs(spec.data)
    floor_amp = 10.0 ** (floor_db / 20.0)
    db = 20.0 * np.log10(np.maximum(mag, floor_amp))
    return Spectrogram(db, spec.config, floor_db)


def db_to_magnitude(spectrogram: Spectrogram) -> np.ndarray:
    """Linear magnitude grid; bins at the floor are treated as silent (0)."""
    s = spectrogram.data
    mag = 10.0 ** (s / 20.0)
    return np.where(s <= spectrogram.floor_db + 1e-9, 0.0, mag)


def spectral_convergence(mag_a: np.ndarray, mag_b: np.ndarray) -> float:
    """Relative Frobenius distance between two magnitude grids.

    Normalized by max(||a||, ||b||) so the value is symmetric.
    """
    denom = max(np.linalg.norm(mag_a), np.linalg.norm(mag_b), 1e-300)
    return float(np.linalg.norm(mag_a - mag_b) / denom)


def griffin_lim(
    spectrogram: Spectrogram, iters: int = 60
) -> tuple[np.ndarray, np.ndarray]:
    """Phase reconstruction by alternating projections from a dB spectrogram.

    Starts from zero phase and iterates istft -> stft -> magnitude
    replacement. Returns (waveform, per-iteration spectral-convergence
    history); the history is non-increasing.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not np.all(np.isfinite(spectrogram.data)):
        raise DataError("spectrogram contains non-finite values")
    config = spectrogram.config
    target = db_to_magnitude(spectrogram)
    length = (spectrogram.data.shape[1] - 1) * config.hop_size
    if not np.any(target > 0):
        return np.zeros(length), np.zeros(iters)

    comp = target.astype(complex)
    history = np.empty(iters)
    for i in range(iters):
        x = istft(ComplexSpectrum(comp, config), length)
        rebuilt = stft(x, config).data
        history[i] = spectral_convergence(np.abs(rebuilt), target)
        comp = target * rebuilt / np.maximum(np.abs(rebuilt), 1e-16)
    x = istft(ComplexSpectrum(comp, config), length)
    return x, history


@dataclass(frozen=True)
class FilterBank:
    """Brickwall FFT band splitter with M contiguous bands over [0, nyquist]."""

    sample_rate: int
    band_edges: np.ndarray = field(default=None)  # M+1 edges in Hz
    num_bands: int = 100

    def __post_init__(self):
        if self.band_edges is None:
            edges = np.linspace(0.0, self.sample_rate / 2.0, self.num_bands + 1)
            object.__setattr__(self, "band_edges", edges)
        else:
            edges = np.asarray(self.band_edges, dtype=np.float64)
            object.__setattr__(self, "band_edges", edges)
            object.__setattr__(self, "num_bands", len(edges) - 1)
        edges = self.band_edges
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise DataError("band edges must be strictly increasing")
        if edges[0] < 0 or edges[-1] > self.sample_rate / 2.0 + 1e-9:
            raise DataError("band edges must lie within [0, sample_rate/2]")

    def band_of_bins(self, num_samples: int) -> np.ndarray:
        """Band index of each rfft bin for a signal of the given length."""
        freqs = np.fft.rfftfreq(num_samples, 1.0 / self.sample_rate)
        idx = np.searchsorted(self.band_edges, freqs, side="right") - 1
        return np.clip(idx, 0, self.num_bands - 1)

    def spectrogram_bins(self, config: StftConfig) -> list[np.ndarray]:
        """Spectrogram row indices belonging to each band."""
        centers = config.bin_centers()
        idx = np.searchsorted(self.band_edges, centers, side="right") - 1
        idx = np.clip(idx, 0, self.num_bands - 1)
        return [np.flatnonzero(idx == m) for m in range(self.num_bands)]


def bandpass_split(signal, bank: FilterBank) -> np.ndarray:
    """Split a signal into bank.num_bands brickwall bands, shape (M, len).

    The bands sum back to the input exactly (disjoint FFT masks).
    """
    x = _check_signal(signal)
    spectrum = np.fft.rfft(x)
    band_idx = bank.band_of_bins(x.size)
    out = np.zeros((bank.num_bands, x.size))
    for m in range(bank.num_bands):
        masked = np.where(band_idx == m, spectrum, 0.0)
        out[m] = np.fft.irfft(masked, n=x.size)
    return out


def default_loss_configs(sample_rate: int) -> list[StftConfig]:
    """The three loss resolutions: windows 512/1024/2048, hop = window/4."""
    return [
        StftConfig(sample_rate=sample_rate, window_size=w, hop_size=w // 4)
        for w in (512, 1024, 2048)
    ]


def multires_stft_loss(a, b, resolutions: list[StftConfig] | None = None) -> float:
    """Sum over resolutions of spectral convergence + log-magnitude L1.

    Non-negative, zero only for identical inputs; the SC term is symmetric.
    """
    x = _check_signal(a)
    y = _check_signal(b)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if resolutions is None:
        resolutions = default_loss_configs(44100)
    total = 0.0
    for config in resolutions:
        ma = np.abs(stft(x, config).data)
        mb = np.abs(stft(y, config).data)
        sc = spectral_convergence(ma, mb)
        log_l1 = float(np.mean(np.abs(np.log(ma + 1e-7) - np.log(mb + 1e-7))))
        total += sc + log_l1
    return total
