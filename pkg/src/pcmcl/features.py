"""Log-mel spectrogram front end.

Fixed choices (none of them tunable, so features are bit-reproducible):

* 16 kHz input, 400-sample (25 ms) Hann window, 160-sample (10 ms) hop,
  no centre padding, so ``n_frames(N) = 1 + (N - 400) // 160``;
* the 400-sample frame is zero-padded to a 1024-point real FFT;
* power spectrum (magnitude squared);
* 128 triangular filters on the HTK mel scale spanning 0-8000 Hz, each
  scaled to a peak of 1;
* natural log with a floor of 1e-10.

The feature cache stores one matrix per file: a 16-byte little-endian
header ``b"MELF"``, ``uint32 version``, ``uint32 bands``, ``uint32 frames``
followed by ``bands * frames`` float32 values in row-major (band-major) order.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 1024
N_MELS = 128
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-5

CACHE_MAGIC = b"MELF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")


def resample_to_16k(x: np.ndarray, sr_in: int) -> np.ndarray:
    """Polyphase resampling to 16 kHz; output length is ``round(len * 16000 / sr_in)``."""
    if sr_in <= 0:
        raise ValueError(f"sample rate must be positive, got {sr_in}")
    x = np.asarray(x, dtype=np.float64)
    if sr_in == SAMPLE_RATE:
        return x
    g = math.gcd(int(sr_in), SAMPLE_RATE)
    up, down = SAMPLE_RATE // g, int(sr_in) // g
    y = resample_poly(x, up, down)
    n_out = int(round(len(x) * SAMPLE_RATE / sr_in))
    if len(y) >= n_out:
        return y[:n_out]
    return np.concatenate([y, np.zeros(n_out - len(y))])


def n_frames(n_samples: int) -> int:
    if n_samples < WIN_LENGTH:
        raise ValueError(f"need at least {WIN_LENGTH} samples, got {n_samples}")
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def frame_signal(x: np.ndarray) -> np.ndarray:
    """Strided view of shape (frames, 400); no copy."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("expected a 1-D waveform")
    if len(x) < WIN_LENGTH:
        raise ValueError(f"input shorter than one window ({len(x)} < {WIN_LENGTH} samples)")
    return sliding_window_view(x, WIN_LENGTH)[::HOP_LENGTH]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges() -> np.ndarray:
    """The N_MELS + 2 edge frequencies (Hz); band k has centre ``edges[k + 1]``."""
    mels = np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2)
    return mel_to_hz(mels)


def mel_centers() -> np.ndarray:
    return mel_band_edges()[1:-1]


@functools.lru_cache(maxsize=None)
def _filterbank() -> np.ndarray:
    edges = mel_band_edges()
    freqs = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb /= fb.max(axis=1, keepdims=True)
    fb.setflags(write=False)
    return fb


def mel_filterbank() -> np.ndarray:
    """(128, 513) triangular filter matrix, each row peaking at 1."""
    return _filterbank()


@functools.lru_cache(maxsize=None)
def _window() -> np.ndarray:
    w = np.hanning(WIN_LENGTH + 1)[:-1]  # periodic Hann
    w.setflags(write=False)
    return w


def power_spectrogram(x: np.ndarray) -> np.ndarray:
    """(frames, 513) power spectrum of Hann-windowed frames."""
    frames = frame_signal(np.asarray(x, dtype=np.float64)) * _window()
    spec = np.fft.rfft(frames, n=N_FFT, axis=1)
    return spec.real**2 + spec.imag**2


def mel_power(x: np.ndarray) -> np.ndarray:
    """(128, frames) mel-band power before the log."""
    return mel_filterbank() @ power_spectrogram(x).T


def mel_spectrogram(x: np.ndarray) -> np.ndarray:
    """(128, frames) log-mel spectrogram of a 16 kHz waveform."""
    return np.log(np.maximum(mel_power(x), LOG_FLOOR))


def concat_mel(
    first: np.ndarray, second: np.ndarray, spec_first: np.ndarray, spec_second: np.ndarray
) -> np.ndarray:
    """Log-mel of ``concatenate([first, second])`` reusing the halves' spectrograms.

    Valid when both halves have the same length, a multiple of the hop: every
    frame then lies inside one half except the few straddling the junction,
    which are the only ones recomputed.
    """
    half = len(first)
    if len(second) != half or half % HOP_LENGTH or half < WIN_LENGTH:
        return mel_spectrogram(np.concatenate([first, second]))
    n_half = n_frames(half)
    n_boundary = half // HOP_LENGTH - n_half
    start = n_half * HOP_LENGTH
    stop = (n_half + n_boundary - 1) * HOP_LENGTH + WIN_LENGTH - half
    junction = mel_spectrogram(np.concatenate([first[start:], second[:stop]]))
    return np.concatenate([spec_first, junction, spec_second], axis=1)


@dataclass(frozen=True)
class FeatureNorm:
    mean: np.ndarray  # (128,)
    std: np.ndarray  # (128,)


def fit_norm(train_specs) -> FeatureNorm:
    """Per-band mean/std over every frame of the given training spectrograms."""
    specs = list(train_specs)
    if not specs:
        raise ValueError("fit_norm needs at least one spectrogram")
    n_bands = specs[0].shape[0]
    total = np.zeros(n_bands)
    count = 0
    for s in specs:
        total += s.sum(axis=1)
        count += s.shape[1]
    mean = total / count
    sq = np.zeros(n_bands)
    for s in specs:
        sq += ((s - mean[:, None]) ** 2).sum(axis=1)
    std = np.maximum(np.sqrt(sq / count), STD_FLOOR)
    return FeatureNorm(mean=mean, std=std)


def apply_norm(spec: np.ndarray, norm: FeatureNorm) -> np.ndarray:
    return (spec - norm.mean[:, None]) / norm.std[:, None]


def write_feature_cache(path: str | Path, spec: np.ndarray) -> None:
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise ValueError("feature cache holds 2-D matrices")
    bands, frames = spec.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, bands, frames))
        fh.write(np.ascontiguousarray(spec, dtype="<f4").tobytes())


def read_feature_cache(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise ValueError(f"{path}: truncated feature cache header")
    magic, version, bands, frames = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    body = data[_CACHE_HEADER.size :]
    if len(body) != 4 * bands * frames:
        raise ValueError(f"{path}: expected {bands}x{frames} floats, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(bands, frames).astype(np.float32)
