"""Spectral features: STFT, mel filterbank, log-mel, MFCC and frame RMS."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_io import Waveform
from .errors import FormatError, InvalidParams, InvalidRef, NegativeFrequency

N_FFT = 1024
HOP = 320
WIN_LENGTH = 1024
N_MELS = 64
FMIN = 0.0
AMIN = 1e-10
REF = 1.0


@dataclass(frozen=True)
class Spectrogram:
    """frames x bins, non-negative. ``power_exponent`` 1 = magnitude, 2 = power."""
    values: np.ndarray
    hop_samples: int
    n_fft: int
    power_exponent: int = 1


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # n_mels x bins
    fmin_hz: float
    fmax_hz: float
    n_mels: int
    centers_hz: np.ndarray


@dataclass(frozen=True)
class LogMelSpectrogram:
    values: np.ndarray  # frames x n_mels, dB
    ref_value: float = REF

    @property
    def shape(self):
        return self.values.shape


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the STFT convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(x) - frame_len) // hop
    if n_frames <= 0:
        return np.zeros((0, frame_len))
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:n_frames]


def stft(w: Waveform | np.ndarray, n_fft: int = N_FFT, hop: int = HOP,
         win_length: int | None = None, power: int = 1) -> Spectrogram:
    """Center-aligned Hann STFT with reflect padding of ``n_fft // 2`` per side."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    win_length = n_fft if win_length is None else win_length
    if not (n_fft >= win_length >= 1) or hop < 1 or len(x) < 1:
        raise InvalidParams(f"bad STFT parameters n_fft={n_fft} win={win_length} hop={hop} len={len(x)}")
    if power not in (1, 2):
        raise InvalidParams("power must be 1 or 2")
    pad = n_fft // 2
    # reflect needs len > pad; fall back to zero padding on very short inputs
    mode = "reflect" if len(x) > pad else "constant"
    xp = np.pad(x, pad, mode=mode)
    window = np.zeros(n_fft)
    off = (n_fft - win_length) // 2
    window[off:off + win_length] = _hann(win_length)
    n_frames = len(x) // hop + 1
    frames = frame_signal(xp, n_fft, hop)[:n_frames]
    mag = np.abs(np.fft.rfft(frames * window, axis=1))
    return Spectrogram(mag ** power if power == 2 else mag, hop, n_fft, power)


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency(f"negative frequency {f}")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float | None = None,
                   n_fft: int = N_FFT, sr: int = 16000) -> MelFilterbank:
    """Peak-1 triangular filters spaced evenly on the mel axis (no area normalization)."""
    fmax = sr / 2.0 if fmax is None else float(fmax)
    if n_mels < 1 or not (0.0 <= fmin < fmax <= sr / 2.0):
        raise InvalidParams(f"bad filterbank n_mels={n_mels} fmin={fmin} fmax={fmax} sr={sr}")
    bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, sr / 2.0, bins)
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, ctr, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / (ctr - lo)
    down = (hi - freqs[None, :]) / (hi - ctr)
    weights = np.maximum(0.0, np.minimum(up, down))
    if np.any(weights.max(axis=1) <= 0):
        raise InvalidParams("some mel filters cover no FFT bin; lower n_mels or raise n_fft")
    weights.setflags(write=False)
    centers = pts[1:-1].copy()
    centers.setflags(write=False)
    return MelFilterbank(weights, float(fmin), fmax, n_mels, centers)


def mel_spectrogram(w: Waveform, n_fft: int = N_FFT, hop: int = HOP, win_length: int = WIN_LENGTH,
                    n_mels: int = N_MELS, fmin: float = FMIN, fmax: float | None = None) -> Spectrogram:
    spec = stft(w, n_fft, hop, win_length, power=2)
    fb = mel_filterbank(n_mels, fmin, fmax, n_fft, w.sample_rate_hz)
    return Spectrogram(spec.values @ fb.weights.T, hop, n_fft, 2)


def log_compress(m: Spectrogram | np.ndarray, ref: float = REF, amin: float = AMIN) -> LogMelSpectrogram:
    """20 * log10(max(S, amin) / ref), applied entrywise."""
    if ref <= 0:
        raise InvalidRef(f"reference must be positive, got {ref}")
    s = m.values if isinstance(m, Spectrogram) else np.asarray(m, dtype=np.float64)
    if np.any(s < 0):
        raise InvalidParams("mel energies must be non-negative")
    return LogMelSpectrogram(20.0 * np.log10(np.maximum(s, amin) / ref), ref)


def log_mel(w: Waveform, **kwargs) -> LogMelSpectrogram:
    return log_compress(mel_spectrogram(w, **kwargs))


def mfcc(w: Waveform | LogMelSpectrogram, n_coeffs: int = 13, include_c0: bool = True,
         n_mels: int = N_MELS) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel frame. Returns frames x n_coeffs."""
    L = w if isinstance(w, LogMelSpectrogram) else log_mel(w, n_mels=n_mels)
    bands = L.values.shape[1]
    first = 0 if include_c0 else 1
    if n_coeffs < 1 or n_coeffs + first > bands:
        raise InvalidParams(f"n_coeffs={n_coeffs} does not fit {bands} mel bands")
    c = dct(L.values, type=2, norm="ortho", axis=1)
    return c[:, first:first + n_coeffs]


def frame_rms(w: Waveform | np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Per-frame RMS amplitude; trailing partial frame is dropped."""
    if frame_len < 1 or hop < 1:
        raise InvalidParams("frame_len and hop must be >= 1")
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    frames = frame_signal(x, frame_len, hop)
    return np.sqrt(np.mean(frames ** 2, axis=1)) if len(frames) else np.zeros(0)


# LMEL: b"LMEL", u32 frames, u32 bands, frames*bands float32, little-endian, row-major
def encode_logmel(L: LogMelSpectrogram) -> bytes:
    v = np.ascontiguousarray(L.values, dtype="<f4")
    return b"LMEL" + struct.pack("<II", *v.shape) + v.tobytes()


def decode_logmel(data: bytes) -> LogMelSpectrogram:
    if len(data) < 12 or data[:4] != b"LMEL":
        raise FormatError("not an LMEL file")
    frames, bands = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * frames * bands:
        raise FormatError(f"LMEL body holds {len(data) - 12} bytes, header implies {4 * frames * bands}")
    v = np.frombuffer(data, dtype="<f4", offset=12).reshape(frames, bands)
    return LogMelSpectrogram(v.astype(np.float64))


def save_logmel(path, L: LogMelSpectrogram) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_logmel(L))


def load_logmel(path) -> LogMelSpectrogram:
    return decode_logmel(Path(path).read_bytes())
