"""CSV histogram tables and a text summary for a pipeline run."""
from __future__ import annotations

import csv
import math
import struct
from collections import Counter
from pathlib import Path

DURATION_BIN_S = 5.0
THRESHOLDS = (0.6, 0.7, 0.8, 0.9)
PROB_BINS = 10

REPORT_COLUMNS = {
    "duration_hist.csv": ["bin_start_s", "bin_end_s", "count"],
    "class_counts.csv": ["source", "label", "count"],
    "split_counts.csv": ["source", "train", "devel", "test", "total"],
    "detection_counts.csv": ["threshold", "kept_count"],
    "detection_hist.csv": ["bin_start", "bin_end", "count"],
}


def _wav_duration(path):
    # header-only read: fmt chunk gives the rate and frame size, data chunk the size
    try:
        with open(path, "rb") as f:
            head = f.read(4096)
    except OSError:
        return None
    pos, rate, block = 12, None, None
    while pos + 8 <= len(head):
        cid = head[pos:pos + 4]
        (size,) = struct.unpack_from("<I", head, pos + 4)
        if cid == b"fmt ":
            _, _, rate, _, block, _ = struct.unpack_from("<HHIIHH", head, pos + 8)
        elif cid == b"data" and rate and block:
            return size / block / rate
        pos += 8 + size + (size & 1)
    return None


def duration_histogram(durations, bin_s: float = DURATION_BIN_S):
    durations = [d for d in durations if d is not None]
    if not durations:
        return []
    n_bins = int(math.floor(max(durations) / bin_s)) + 1
    counts = Counter(int(math.floor(d / bin_s)) for d in durations)
    return [(i * bin_s, (i + 1) * bin_s, counts.get(i, 0)) for i in range(n_bins)]


def detection_counts(probs, thresholds=THRESHOLDS):
    return [(t, sum(p >= t for p in probs)) for t in thresholds]


def detection_histogram(probs, n_bins: int = PROB_BINS):
    if not probs:
        return []
    counts = Counter(min(int(p * n_bins), n_bins - 1) for p in probs)
    return [(i / n_bins, (i + 1) / n_bins, counts.get(i, 0)) for i in range(n_bins)]


def _write(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def summary_text(augmentation="", feature="log mel spectrogram", classifier="linear head (AdamW)",
                 ua=None, counts=None) -> str:
    cols = ["Augmentation", "Feature", "Classifier", "UA (%)"]
    vals = [augmentation or "none", feature, classifier, "-" if ua is None else f"{100 * ua:.2f}"]
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    line = lambda xs: "  ".join(x.ljust(w) for x, w in zip(xs, widths))  # noqa: E731
    out = [line(cols), line(["-" * w for w in widths]), line(vals)]
    if counts:
        out.append("")
        out.append("rows per stage: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return "\n".join(out) + "\n"


def report(rows, out_dir, metrics=None, detection_rows=None, augmentation="", counts=None,
           thresholds=THRESHOLDS):
    """Write the report tables for ``rows`` into ``out_dir``; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    originals = [r for r in rows if not r.augment]

    durations = [r.duration_s if r.duration_s is not None else _wav_duration(r.path) for r in originals]
    tables = {
        "duration_hist.csv": duration_histogram(durations),
        "class_counts.csv": sorted(Counter((r.source, r.label) for r in originals).items()),
    }
    tables["class_counts.csv"] = [(s, lab, n) for (s, lab), n in tables["class_counts.csv"]]
    by_source = {}
    for r in originals:
        by_source.setdefault(r.source, Counter())[r.split] += 1
    tables["split_counts.csv"] = [(s, c["train"], c["devel"], c["test"], sum(c.values()))
                                  for s, c in sorted(by_source.items())]

    det = detection_rows if detection_rows is not None else rows
    probs = [r.detection_prob for r in det if r.detection_prob is not None]
    tables["detection_counts.csv"] = detection_counts(probs, thresholds) if probs else []
    tables["detection_hist.csv"] = detection_histogram(probs)

    written = []
    for name, body in tables.items():
        _write(out_dir / name, REPORT_COLUMNS[name], body)
        written.append(out_dir / name)
    ua = metrics.unweighted_accuracy if metrics is not None else None
    (out_dir / "summary.txt").write_text(summary_text(augmentation, ua=ua, counts=counts), encoding="utf-8")
    written.append(out_dir / "summary.txt")
    return written
