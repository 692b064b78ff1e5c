"""Desk-scale synthetic cough corpus: burst trains with known boundaries.

Positive files get spectrally brighter bursts than negative files, so a
classifier on log-mel statistics has something real to learn.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import Waveform, encode_wav
from .augment import item_rng

GT_COLUMNS = ["id", "index", "start_sample", "end_sample"]


@dataclass(frozen=True)
class SynthSpec:
    n_files: int = 200
    bursts_min: int = 2
    bursts_max: int = 4
    burst_min_s: float = 0.25
    burst_max_s: float = 0.45
    gap_min_s: float = 0.4
    burst_fraction_max: float = 0.15
    min_duration_s: float = 4.0
    tilt_positive: float = 0.5
    tilt_negative: float = -1.0
    tilt_jitter: float = 0.3
    amp_min: float = 0.75
    # 2 = each cough has an explosive and a voiced phase split by a quiet dip
    phases: int = 1
    dip_s: float = 0.2
    dip_level: float = 0.25
    noise_floor: float = 0.003
    non_cough_fraction: float = 0.0
    sample_rate: int = 16000
    sources: tuple = ("synth_a", "synth_b")
    seed: int = 0


@dataclass
class SynthItem:
    id: str
    label: str
    source: str
    waveform: Waveform
    bursts: list  # [(start, end)] ground truth in samples


def _tilted_noise(n, sr, tilt, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    shape = (np.maximum(f, 50.0) / 1000.0) ** tilt
    shape[f > 0.45 * sr] = 0.0
    x = np.fft.irfft(spec * shape, n)
    return x / (np.max(np.abs(x)) + 1e-12)


def _envelope(n, sr, rng):
    t = np.arange(n) / sr
    attack = max(1, int(0.015 * sr))
    release = max(1, int(0.02 * sr))
    decay = rng.uniform(2.0, 4.0) / (n / sr)
    env = np.exp(-decay * t * 0.5)
    env[:attack] *= np.linspace(0.0, 1.0, attack)
    env[-release:] *= np.linspace(1.0, 0.0, release)
    return env


def make_item(i: int, spec: SynthSpec) -> SynthItem:
    rng = item_rng(spec.seed, f"synth{i}")
    sr = spec.sample_rate
    label = "positive" if i % 2 else "negative"
    source = spec.sources[(i // 2) % len(spec.sources)]
    fid = f"syn{i:04d}"
    non_cough = rng.random() < spec.non_cough_fraction

    k = int(rng.integers(spec.bursts_min, spec.bursts_max + 1))
    lengths = rng.uniform(spec.burst_min_s, spec.burst_max_s, k)
    total = max(spec.min_duration_s, lengths.sum() / spec.burst_fraction_max,
                lengths.sum() + (k + 1) * spec.gap_min_s)
    n = int(round(total * sr))
    x = spec.noise_floor * rng.standard_normal(n)
    bursts = []
    if non_cough:
        # steady broadband hum, no discrete events
        t = np.arange(n) / sr
        x += 0.3 * np.sin(2 * np.pi * rng.uniform(80, 300) * t) + 0.2 * _tilted_noise(n, sr, 0.0, rng)
    else:
        slack = total - lengths.sum() - (k + 1) * spec.gap_min_s
        cuts = np.sort(rng.uniform(0.0, slack, k))
        extra = np.diff(np.concatenate([[0.0], cuts]))
        tilt = (spec.tilt_positive if label == "positive" else spec.tilt_negative)
        pos = 0.0
        for j in range(k):
            pos += spec.gap_min_s + extra[j]
            s = int(round(pos * sr))
            m = int(round(lengths[j] * sr))
            b = _tilted_noise(m, sr, tilt + rng.uniform(-spec.tilt_jitter, spec.tilt_jitter), rng)
            env = _envelope(m, sr, rng)
            if spec.phases == 2:
                d = int(round(spec.dip_s * sr))
                a = (m - d) // 2
                env = np.concatenate([_envelope(a, sr, rng), np.full(d, spec.dip_level),
                                      0.8 * _envelope(m - a - d, sr, rng)])
            x[s:s + m] += rng.uniform(spec.amp_min, 1.0) * b * env
            bursts.append((s, s + m))
            pos += lengths[j]
    x /= np.max(np.abs(x))
    return SynthItem(fid, label, source, Waveform(x, sr, fid), bursts)


def generate(spec: SynthSpec):
    return [make_item(i, spec) for i in range(spec.n_files)]


def write_corpus(spec: SynthSpec, out_dir) -> Path:
    """Write WAVs, ``manifest.csv`` and ``ground_truth.csv``; returns the manifest path."""
    from .manifest import Row, write_manifest

    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out_dir / "ground_truth.csv", "w", newline="", encoding="utf-8") as f:
        gt = csv.writer(f, lineterminator="\n")
        gt.writerow(GT_COLUMNS)
        for item in generate(spec):
            path = out_dir / "wav" / f"{item.id}.wav"
            path.write_bytes(encode_wav(item.waveform, 16))
            rows.append(Row(id=item.id, path=str(path.relative_to(out_dir)), label=item.label,
                            source=item.source, split="unassigned"))
            for j, (s, e) in enumerate(item.bursts):
                gt.writerow([item.id, j, s, e])
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


def read_ground_truth(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        for r in csv.DictReader(f):
            out.setdefault(r["id"], []).append((int(r["start_sample"]), int(r["end_sample"])))
    return out


def interval_iou(a, b) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def match_segments(truth, found, min_iou: float = 0.5) -> int:
    """Greedy one-to-one matching; returns the number of truth intervals recovered."""
    used = set()
    hits = 0
    for t in truth:
        best, best_j = 0.0, None
        for j, f in enumerate(found):
            if j in used:
                continue
            iou = interval_iou(t, f)
            if iou > best:
                best, best_j = iou, j
        if best_j is not None and best >= min_iou:
            used.add(best_j)
            hits += 1
    return hits
