"""Split a multi-cough recording into per-cough segments.

Two detectors share the same post-processing (merge close segments, drop
short ones, pad and clip):

* hysteresis: a segment opens when the frame RMS reaches ``upper_ratio`` times
  the global RMS and closes at the first frame below ``lower_ratio`` times it;
* rms: every frame whose RMS reaches the absolute ``rms_threshold`` (0.09 on
  peak-normalized audio) is a cough frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform
from .dsp import frame_rms
from .errors import InvalidConfig, OutOfRange

METHODS = ("hysteresis", "rms")


@dataclass(frozen=True)
class SegmenterConfig:
    method: str = "hysteresis"
    frame_len: int = 1024
    hop: int = 256
    upper_ratio: float = 2.0
    lower_ratio: float = 0.5
    rms_threshold: float = 0.09
    min_duration_ms: float = 200.0
    merge_gap_ms: float = 100.0
    pad_ms: float = 50.0

    def validate(self) -> "SegmenterConfig":
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown segmentation method {self.method!r}")
        if self.frame_len < 1 or self.hop < 1:
            raise InvalidConfig("frame_len and hop must be >= 1")
        if not self.upper_ratio >= self.lower_ratio > 0:
            raise InvalidConfig("need upper_ratio >= lower_ratio > 0")
        if self.rms_threshold <= 0:
            raise InvalidConfig("rms_threshold must be positive")
        if min(self.min_duration_ms, self.merge_gap_ms, self.pad_ms) < 0:
            raise InvalidConfig("durations must be non-negative")
        return self


@dataclass(frozen=True, order=True)
class SegmentBounds:
    start_sample: int
    end_sample: int
    parent_id: str = ""
    index: int = 0

    @property
    def length(self) -> int:
        return self.end_sample - self.start_sample


def _frames_to_samples(runs, cfg, n):
    # a run of frames [i, j) spans from the first frame's start to the last frame's end
    return [(i * cfg.hop, min((j - 1) * cfg.hop + cfg.frame_len, n)) for i, j in runs]


def _postprocess(spans, n, sr, cfg, parent_id):
    ms = sr / 1000.0
    merge_gap = cfg.merge_gap_ms * ms
    min_len = cfg.min_duration_ms * ms
    pad = int(round(cfg.pad_ms * ms))

    merged = []
    for s, e in spans:
        if merged and s - merged[-1][1] < merge_gap:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    kept = [(s, e) for s, e in merged if e - s >= min_len]

    out = []
    for k, (s, e) in enumerate(kept):
        lo, hi = max(0, s - pad), min(n, e + pad)
        # padding never crosses the midpoint of the gap to a neighbour
        if k > 0:
            lo = max(lo, (kept[k - 1][1] + s + 1) // 2)
        if k + 1 < len(kept):
            hi = min(hi, (e + kept[k + 1][0] + 1) // 2)
        out.append(SegmentBounds(int(lo), int(hi), parent_id, k))
    return out


def _runs(mask):
    """Maximal runs of True as half-open [start, end) frame ranges."""
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def hysteresis_runs(env: np.ndarray, upper: float, lower: float):
    runs = []
    start = None
    for i, v in enumerate(env):
        if start is None:
            if v >= upper:
                start = i
        elif v < lower:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(env)))
    return runs


def segment_hysteresis(w: Waveform, cfg: SegmenterConfig = SegmenterConfig()) -> list[SegmentBounds]:
    cfg.validate()
    x = w.samples
    g = float(np.sqrt(np.mean(x ** 2))) if len(x) else 0.0
    if g == 0.0:
        return []
    env = frame_rms(x, cfg.frame_len, cfg.hop)
    runs = hysteresis_runs(env, cfg.upper_ratio * g, cfg.lower_ratio * g)
    spans = _frames_to_samples(runs, cfg, len(x))
    return _postprocess(spans, len(x), w.sample_rate_hz, cfg, w.source_id)


def segment_rms(w: Waveform, cfg: SegmenterConfig = SegmenterConfig(method="rms")) -> list[SegmentBounds]:
    cfg.validate()
    x = w.samples
    env = frame_rms(x, cfg.frame_len, cfg.hop)
    spans = _frames_to_samples(_runs(env >= cfg.rms_threshold), cfg, len(x))
    return _postprocess(spans, len(x), w.sample_rate_hz, cfg, w.source_id)


def segment(w: Waveform, cfg: SegmenterConfig = SegmenterConfig()) -> list[SegmentBounds]:
    return (segment_hysteresis if cfg.method == "hysteresis" else segment_rms)(w, cfg)


def extract_segment(w: Waveform, b: SegmentBounds) -> Waveform:
    if not 0 <= b.start_sample < b.end_sample <= len(w):
        raise OutOfRange(f"bounds [{b.start_sample}, {b.end_sample}) outside signal of {len(w)} samples")
    return w.with_samples(w.samples[b.start_sample:b.end_sample].copy(),
                          source_id=f"{b.parent_id or w.source_id}_{b.index}", metadata={})
