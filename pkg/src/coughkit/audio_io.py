"""WAV decoding/encoding, band-limited resampling and peak normalization."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import InvalidParams, MalformedContainer, TruncatedData, UnsupportedCodec

CANONICAL_RATE = 16000

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# resampler design
TAPS_PER_PHASE = 64
STOPBAND_DB = 80.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidParams("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise InvalidParams("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise InvalidParams(f"sample rate must be positive, got {self.sample_rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples, **changes) -> "Waveform":
        return replace(self, samples=samples, **changes)


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes, source_id: str = "") -> Waveform:
    """Decode a RIFF/WAVE byte string (PCM16 or float32) to a mono waveform.

    Channels are averaged. 16-bit samples are divided by 32768.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer("missing RIFF/WAVE magic")
    (riff_size,) = struct.unpack_from("<I", data, 4)
    if riff_size + 8 < 12:
        raise MalformedContainer(f"bad RIFF size {riff_size}")

    fmt = None
    payload = None
    for cid, start, size in _chunks(data):
        if cid == b"fmt ":
            if size < 16 or start + 16 > len(data):
                raise MalformedContainer("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, start)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and size >= 40:
                (sub,) = struct.unpack_from("<H", data, start + 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise MalformedContainer("data chunk precedes fmt chunk")
            payload = (start, size)
            break
    if fmt is None:
        raise MalformedContainer("no fmt chunk")
    if payload is None:
        raise MalformedContainer("no data chunk")

    tag, channels, rate, _byte_rate, block_align, bits = fmt
    if channels < 1:
        raise MalformedContainer("zero channels")
    if rate <= 0:
        raise MalformedContainer("zero sample rate")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), None
    else:
        raise UnsupportedCodec(f"format tag {tag} with {bits} bits per sample")
    if block_align != channels * dtype.itemsize:
        raise MalformedContainer(f"block align {block_align} inconsistent with {channels}x{bits} bit")

    start, size = payload
    if size % block_align:
        raise MalformedContainer(f"data size {size} is not a whole number of frames")
    if start + size > len(data):
        have = (len(data) - start) // block_align
        raise TruncatedData(f"data chunk declares {size // block_align} frames, holds {have}")

    frames = np.frombuffer(data, dtype=dtype, count=size // dtype.itemsize, offset=start)
    frames = frames.reshape(-1, channels).astype(np.float64)
    if scale is not None:
        frames *= scale
    mono = frames[:, 0] if channels == 1 else frames.mean(axis=1)
    return Waveform(mono, rate, source_id)


def encode_wav(w: Waveform, bit_depth: int | str = 16) -> bytes:
    """Encode as a canonical 44-byte-header mono WAV. ``bit_depth`` is 16 or "32f"."""
    if bit_depth in (16, "16"):
        x = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
        body = np.rint(x * 32768.0).astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif bit_depth in (32, "32", "32f"):
        body = w.samples.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise InvalidParams(f"unsupported bit depth {bit_depth!r}")
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, tag, 1, w.sample_rate_hz,
                                    w.sample_rate_hz * block, block, bits)
    header += b"data" + struct.pack("<I", len(body))
    return header + body


def read_wav(path, source_id: str | None = None) -> Waveform:
    path = Path(path)
    return decode_wav(path.read_bytes(), source_id if source_id is not None else path.stem)


def write_wav(path, w: Waveform, bit_depth: int | str = 16) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_wav(w, bit_depth))


def design_resampler(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for an ``up/down`` polyphase resampler.

    The stopband starts at the lower of the two Nyquist frequencies; the
    transition band is whatever ``TAPS_PER_PHASE`` taps per phase buys at
    ``STOPBAND_DB`` attenuation.
    """
    rate = max(up, down)
    numtaps = TAPS_PER_PHASE * rate + 1
    beta = signal.kaiser_beta(STOPBAND_DB)
    # transition width (normalized to the upsampled Nyquist) from Kaiser's formula
    width = (STOPBAND_DB - 7.95) / (2.285 * (numtaps - 1) * math.pi)
    cutoff = 1.0 / rate - width / 2.0
    return signal.firwin(numtaps, cutoff, window=("kaiser", beta))


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    target_rate_hz = int(target_rate_hz)
    if target_rate_hz <= 0:
        raise InvalidParams("target rate must be positive")
    if target_rate_hz == w.sample_rate_hz:
        return w
    g = math.gcd(w.sample_rate_hz, target_rate_hz)
    up, down = target_rate_hz // g, w.sample_rate_hz // g
    n_out = int(math.floor(len(w) * target_rate_hz / w.sample_rate_hz + 0.5))
    if len(w) == 0:
        y = np.zeros(0)
    else:
        y = signal.resample_poly(w.samples, up, down, window=design_resampler(up, down))
        y = y[:n_out] if len(y) >= n_out else np.pad(y, (0, n_out - len(y)))
    return w.with_samples(y, sample_rate_hz=target_rate_hz)


def peak_normalize(w: Waveform) -> Waveform:
    """Scale so that max |sample| is exactly 1. Silent input comes back flagged."""
    peak = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    if peak == 0.0:
        return w.with_samples(w.samples, metadata={**w.metadata, "warning": "all-zero signal"})
    if peak == 1.0:
        return w
    y = w.samples / peak
    # division can land one ulp off 1.0; pin the peak
    i = int(np.argmax(np.abs(w.samples)))
    y[i] = math.copysign(1.0, y[i])
    return w.with_samples(y)


def load_canonical(path, source_id: str | None = None, rate: int = CANONICAL_RATE) -> Waveform:
    """Read a WAV file, resample to ``rate`` and peak-normalize, in that order."""
    return peak_normalize(resample(read_wav(path, source_id), rate))
