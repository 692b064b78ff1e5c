"""Dataset manifests: UTF-8 CSV with a frozen column set (see docs/formats.md)."""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import DataError

LABELS = ("positive", "negative", "unknown")
SPLITS = ("train", "devel", "test", "unassigned")


@dataclass(frozen=True)
class Row:
    id: str
    path: str
    label: str = "unknown"
    source: str = ""
    split: str = "unassigned"
    parent_id: str = ""
    detection_prob: float | None = None
    segment_index: int | None = None
    start_sample: int | None = None
    end_sample: int | None = None
    seg_method: str = ""
    duration_s: float | None = None
    feature_path: str = ""
    augment: str = ""
    soft_positive: float | None = None

    def with_(self, **changes) -> "Row":
        return replace(self, **changes)

    @property
    def target(self) -> float:
        """Positive-class probability used as the training target."""
        if self.soft_positive is not None:
            return self.soft_positive
        return 1.0 if self.label == "positive" else 0.0


COLUMNS = [f.name for f in fields(Row)]
_FLOATS = {"detection_prob", "duration_s", "soft_positive"}
_INTS = {"segment_index", "start_sample", "end_sample"}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name, text, where):
    if name in _FLOATS:
        return float(text) if text != "" else None
    if name in _INTS:
        try:
            return int(text) if text != "" else None
        except ValueError:
            raise DataError(f"{where}: column {name} expects an integer, got {text!r}") from None
    return text


def validate_rows(rows) -> None:
    seen = set()
    for r in rows:
        if r.id in seen:
            raise DataError(f"duplicate manifest id '{r.id}'")
        seen.add(r.id)
        if r.label not in LABELS:
            raise DataError(f"row '{r.id}': unknown label {r.label!r}")
        if r.split not in SPLITS:
            raise DataError(f"row '{r.id}': unknown split {r.split!r}")
        if r.detection_prob is not None and not 0.0 <= r.detection_prob <= 1.0:
            raise DataError(f"row '{r.id}': detection_prob outside [0, 1]")


def read_manifest(path) -> list[Row]:
    """Rows with paths resolved to absolute paths (relative entries are taken
    relative to the manifest's directory)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    base = path.parent.resolve()
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = {"id", "path"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing required columns {sorted(missing)}")
        unknown = set(reader.fieldnames) - set(COLUMNS)
        if unknown:
            raise DataError(f"{path}: unknown columns {sorted(unknown)}")
        for n, rec in enumerate(reader, start=2):
            where = f"{path}:{n}"
            try:
                vals = {k: _parse(k, v or "", where) for k, v in rec.items()}
            except ValueError as e:
                raise DataError(f"{where}: {e}") from None
            for key in ("path", "feature_path"):
                if vals.get(key):
                    vals[key] = str((base / vals[key]).resolve()) if not os.path.isabs(vals[key]) else vals[key]
            rows.append(Row(**vals))
    validate_rows(rows)
    return rows


def write_manifest(path, rows) -> None:
    """Write rows with paths stored relative to the manifest's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    validate_rows(rows)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            d = asdict(r)
            for key in ("path", "feature_path"):
                if d[key] and os.path.isabs(d[key]):
                    d[key] = os.path.relpath(d[key], base)
            w.writerow([_fmt(d[c]) for c in COLUMNS])
