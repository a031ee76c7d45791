"""File I/O: mono WAV clips, PDT1 tensor files, and atomic writes.

PDT1 is the little-endian tensor container used for spectrograms, latents,
embeddings and model parameters: magic ``PDT1``, u32 rank, rank u32 dims,
then the f32 row-major payload.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np
from scipy.io import wavfile

from .errors import DataError

PDT_MAGIC = b"PDT1"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename in the same dir."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pdt(path, array) -> None:
    """Serialize an array to a PDT1 file (f32, row-major)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    header = PDT_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    atomic_write_bytes(path, header + arr.tobytes())


def read_pdt(path) -> np.ndarray:
    """Read a PDT1 file into a float32 ndarray."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != PDT_MAGIC:
        raise DataError(f"{path}: not a PDT1 tensor file (bad magic)")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank > 8:
        raise DataError(f"{path}: implausible tensor rank {rank}")
    offset = 8
    if len(raw) < offset + 4 * rank:
        raise DataError(f"{path}: truncated PDT1 header")
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = raw[offset:]
    if len(payload) != 4 * count:
        raise DataError(
            f"{path}: payload holds {len(payload) // 4} floats, header says {count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def read_wav(path, expect_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read a mono WAV file as float64 samples in [-1, 1].

    Accepts 16-bit PCM and 32-bit float. There is no resampling: if
    ``expect_rate`` is given and differs from the file's rate, a DataError
    is raised.
    """
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot parse WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(
            f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or 32-bit float"
        )
    if expect_rate is not None and rate != expect_rate:
        raise DataError(
            f"{path}: sample rate {rate} Hz, expected {expect_rate} Hz (no resampling)"
        )
    return samples, int(rate)


def write_wav(path, samples, rate: int, pcm16: bool = False) -> None:
    """Write mono samples to a WAV file (32-bit float, or 16-bit PCM)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("write_wav expects a 1-D signal")
    if pcm16:
        data = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    import io as _io

    buf = _io.BytesIO()
    wavfile.write(buf, rate, data)
    atomic_write_bytes(path, buf.getvalue())
