import csv
import re
from pathlib import Path

import pytest

from coughkit.manifest import Row
from coughkit.report import (REPORT_COLUMNS, detection_counts, detection_histogram,
                             duration_histogram, report, summary_text)

REFERENCE = Path(__file__).resolve().parents[1] / "paper.md"


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_empty_manifest_gives_headers_only(tmp_path):
    report([], tmp_path)
    for name, cols in REPORT_COLUMNS.items():
        assert read_csv(tmp_path / name) == [cols]
    assert "UA (%)" in (tmp_path / "summary.txt").read_text()


def test_duration_bins():
    assert duration_histogram([5.0, 9.0]) == [(0.0, 5.0, 0), (5.0, 10.0, 2)]
    assert duration_histogram([0.0, 4.999, 10.0]) == [(0.0, 5.0, 2), (5.0, 10.0, 0), (10.0, 15.0, 1)]
    assert duration_histogram([]) == []


def test_detection_counts_example():
    assert detection_counts([0.95, 0.05], (0.6, 0.9)) == [(0.6, 1), (0.9, 1)]
    # kept counts never increase with the threshold
    probs = [i / 37 for i in range(38)]
    kept = [n for _, n in detection_counts(probs, (0.1, 0.5, 0.6, 0.9, 1.0))]
    assert kept == sorted(kept, reverse=True)


def test_detection_histogram_edges():
    hist = detection_histogram([0.0, 0.05, 0.1, 1.0])
    assert len(hist) == 10
    assert hist[0][2] == 2 and hist[1][2] == 1 and hist[9][2] == 1
    assert sum(n for *_, n in hist) == 4


def test_report_tables(tmp_path):
    rows = [
        Row("a", "a.wav", "positive", "s1", "train", detection_prob=0.95, duration_s=5.0),
        Row("b", "b.wav", "negative", "s1", "devel", detection_prob=0.05, duration_s=9.0),
        Row("c", "c.wav", "negative", "s2", "test", duration_s=1.0),
        Row("a~mix0", "a.wav", "positive", "s1", "train", augment="mixup", duration_s=30.0),
    ]
    report(rows, tmp_path, thresholds=(0.6, 0.9))
    assert read_csv(tmp_path / "duration_hist.csv")[1:] == [["0.0", "5.0", "1"], ["5.0", "10.0", "2"]]
    assert read_csv(tmp_path / "class_counts.csv")[1:] == [["s1", "negative", "1"], ["s1", "positive", "1"],
                                                           ["s2", "negative", "1"]]
    assert read_csv(tmp_path / "split_counts.csv")[1:] == [["s1", "1", "1", "0", "2"], ["s2", "0", "0", "1", "1"]]
    assert read_csv(tmp_path / "detection_counts.csv")[1:] == [["0.6", "1"], ["0.9", "1"]]


def test_summary_rendering():
    text = summary_text(augmentation="mixup", ua=0.7554, counts={"prepare": 3})
    assert "75.54" in text and "mixup" in text and "prepare=3" in text
    assert "-" in summary_text().splitlines()[2]


def test_reference_threshold_row():
    # the reference run reports its best threshold row as 90% -> 1413 files, 75.54% UA
    text = REFERENCE.read_text(encoding="utf-8")
    m = re.search(r"\$90 \\%\$ & \$(\d+)\$ & \\textbf\{([\d.]+)\\%\}", text)
    assert m is not None
    count, ua = int(m.group(1)), float(m.group(2))
    assert (count, ua) == (1413, 75.54)
    assert f"{ua:.2f}" in summary_text(ua=ua / 100)
