"""Mixup, SpecAugment-style masking and additive noise at a target SNR."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform
from .dsp import LogMelSpectrogram
from .errors import InvalidAlpha, InvalidConfig, RateMismatch, ShapeMismatch, SilentInput


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.5
    n_freq_masks: int = 2
    max_freq_width: int = 8
    n_time_masks: int = 2
    max_time_frac: float = 0.1
    snr_min_db: float = 0.0
    snr_max_db: float = 15.0
    mask_fill: str = "mean"  # or "zero"
    seed: int = 0

    def validate(self) -> "AugmentConfig":
        if not self.alpha > 0:
            raise InvalidAlpha(f"mixup alpha must be positive, got {self.alpha}")
        if min(self.n_freq_masks, self.max_freq_width, self.n_time_masks) < 0:
            raise InvalidConfig("mask counts and widths must be non-negative")
        if not 0.0 <= self.max_time_frac <= 1.0:
            raise InvalidConfig("max_time_frac must lie in [0, 1]")
        if self.snr_min_db > self.snr_max_db:
            raise InvalidConfig("snr_min_db exceeds snr_max_db")
        if self.mask_fill not in ("mean", "zero"):
            raise InvalidConfig(f"unknown mask fill {self.mask_fill!r}")
        return self


def item_rng(seed: int, item_id: str, stream: str = "") -> np.random.Generator:
    """Independent generator per (seed, item) so parallel and serial runs agree."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(f"{stream}/{item_id}".encode())])


def soft_label(positive) -> np.ndarray:
    """(negative, positive) pair from a class index or a positive-class probability."""
    p = float(positive)
    return np.array([1.0 - p, p])


def sample_mixup_lambda(alpha: float, rng: np.random.Generator) -> float:
    if not alpha > 0:
        raise InvalidAlpha(f"mixup alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mixup(xa, xb, ya, yb, lam: float):
    xa, xb = np.asarray(xa, dtype=np.float64), np.asarray(xb, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ShapeMismatch(f"cannot mix shapes {xa.shape} and {xb.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return xa.copy(), np.asarray(ya, dtype=np.float64).copy()
    if lam == 0.0:
        return xb.copy(), np.asarray(yb, dtype=np.float64).copy()
    y = lam * np.asarray(ya, dtype=np.float64) + (1.0 - lam) * np.asarray(yb, dtype=np.float64)
    return lam * xa + (1.0 - lam) * xb, y


def mixup_logmel(La: LogMelSpectrogram, Lb: LogMelSpectrogram, ya, yb, lam: float):
    """Mix two log-mel matrices; the longer one is cropped to the shorter."""
    n = min(La.values.shape[0], Lb.values.shape[0])
    x, y = mixup(La.values[:n], Lb.values[:n], ya, yb, lam)
    return LogMelSpectrogram(x, La.ref_value), y


def sample_spec_masks(shape, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean frames x bands mask of the cells SpecAugment will overwrite."""
    frames, bands = shape
    if cfg.max_freq_width > bands and cfg.n_freq_masks > 0:
        raise InvalidConfig(f"max_freq_width {cfg.max_freq_width} exceeds {bands} bands")
    mask = np.zeros(shape, dtype=bool)
    for _ in range(cfg.n_freq_masks):
        width = int(rng.integers(0, cfg.max_freq_width + 1))
        start = int(rng.integers(0, bands - width + 1))
        mask[:, start:start + width] = True
    max_t = int(np.floor(cfg.max_time_frac * frames))
    for _ in range(cfg.n_time_masks):
        width = int(rng.integers(0, max_t + 1))
        start = int(rng.integers(0, frames - width + 1))
        mask[start:start + width, :] = True
    return mask


def spec_augment(L: LogMelSpectrogram, cfg: AugmentConfig, rng: np.random.Generator) -> LogMelSpectrogram:
    cfg.validate()
    mask = sample_spec_masks(L.values.shape, cfg, rng)
    if not mask.any():
        return L
    fill = float(L.values.mean()) if cfg.mask_fill == "mean" else 0.0
    out = L.values.copy()
    out[mask] = fill
    return LogMelSpectrogram(out, L.ref_value)


def _power(x):
    return float(np.mean(x ** 2)) if len(x) else 0.0


def fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Crop ``noise`` to ``n`` samples at a random offset, or tile it when too short."""
    if len(noise) >= n:
        off = int(rng.integers(0, len(noise) - n + 1))
        return noise[off:off + n]
    reps = -(-n // len(noise))
    return np.tile(noise, reps)[:n]


def noise_gain(p_clean: float, p_noise: float, snr_db: float) -> float:
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def add_noise(clean: Waveform, noise: Waveform, snr_db: float,
              rng: np.random.Generator | None = None) -> Waveform:
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise RateMismatch(f"clean at {clean.sample_rate_hz} Hz, noise at {noise.sample_rate_hz} Hz")
    p_clean = _power(clean.samples)
    if p_clean == 0.0 or _power(noise.samples) == 0.0:
        raise SilentInput("clean and noise signals must both carry energy")
    rng = np.random.default_rng(0) if rng is None else rng
    seg = fit_noise(noise.samples, len(clean), rng)
    p_noise = _power(seg)
    if p_noise == 0.0:
        raise SilentInput("selected noise excerpt is silent")
    g = noise_gain(p_clean, p_noise, snr_db)
    return clean.with_samples(clean.samples + g * seg,
                              metadata={**clean.metadata, "snr_db": snr_db, "noise_id": noise.source_id})


def random_snr(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    return float(rng.uniform(cfg.snr_min_db, cfg.snr_max_db))
