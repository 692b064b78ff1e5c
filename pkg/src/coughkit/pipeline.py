"""Stage orchestration: prepare -> detect -> segment -> featurize -> augment -> train -> eval.

Every stage maps a list of manifest rows to a new list and writes its own
manifest under ``<out_dir>/manifests``. Test rows are held back until the
eval stage so no training-side operation ever touches them.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment as aug
from .audio_io import decode_wav, encode_wav, peak_normalize, resample
from .config import STAGES, PipelineConfig
from .cough_detect import DEMO_MODEL, extract_detection_features, load_model, predict_cough_probability
from .dsp import load_logmel, log_mel, save_logmel
from .errors import CoughkitError, ConfigError, DataError, EmptySignal, SilentInput, StageError
from .manifest import Row, read_manifest, write_manifest
from .report import report
from .segmentation import SegmentBounds, extract_segment, segment
from .train_eval import (LinearHead, MetricsReport, embed_pooled, forward, load_embeddings,
                         load_head, predict_from_activations, save_head, split_train_dev, train,
                         unweighted_accuracy)

log = logging.getLogger(__name__)

SWEEP_DIMENSIONS = {
    "threshold": "threshold",
    "split_ratio": "split_fraction",
    "alpha": "alpha",
    "lr": "lr",
    "weight_decay": "weight_decay",
}
SWEEP_COLUMNS = {
    "threshold": ["threshold", "data_count", "ua", "status"],
    "split_ratio": ["train_fraction", "dev_fraction", "train_count", "dev_count", "ua", "status"],
    "alpha": ["alpha", "ua", "status"],
    "lr": ["lr", "ua", "status"],
    "weight_decay": ["weight_decay", "ua", "status"],
}


@dataclass
class Context:
    cfg: PipelineConfig
    out_dir: Path
    reader: object = None
    phase: str = ""
    detections: list = field(default_factory=list)
    head: LinearHead | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    history: list = field(default_factory=list)
    metrics: MetricsReport | None = None
    _model: object = None
    _embeddings: dict | None = None
    _noise: list | None = None

    def read(self, path) -> bytes:
        if self.reader is not None:
            return self.reader(str(path), self.phase)
        return Path(path).read_bytes()

    def waveform(self, row: Row):
        try:
            return decode_wav(self.read(row.path), row.id)
        except FileNotFoundError:
            raise DataError(f"audio file for '{row.id}' not found: {row.path}") from None

    def map(self, fn, rows):
        if self.cfg.workers > 1 and len(rows) > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                return list(pool.map(fn, rows))
        return [fn(r) for r in rows]

    @property
    def model(self):
        if self._model is None:
            self._model = load_model(self.cfg.detector_model or DEMO_MODEL)
        return self._model

    @property
    def external_embeddings(self):
        if self._embeddings is None and self.cfg.embeddings:
            self._embeddings = load_embeddings(self.cfg.embeddings)
        return self._embeddings

    @property
    def noise_bank(self):
        if self._noise is None:
            self._noise = read_manifest(self.cfg.noise_manifest) if self.cfg.noise_manifest else []
        return self._noise


@dataclass
class RunResult:
    metrics: MetricsReport | None
    test_metrics: MetricsReport | None
    stage_counts: dict
    train_count: int = 0
    dev_count: int = 0
    history: list = field(default_factory=list)


# --- stages ----------------------------------------------------------------

def prepare_rows(rows, ctx: Context):
    """Resample to the canonical rate, then peak-normalize; written as float32 WAV."""
    out = ctx.out_dir / "prepared"

    def one(row):
        w = peak_normalize(resample(ctx.waveform(row), ctx.cfg.sample_rate))
        path = out / f"{row.id}.wav"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_wav(w, "32f"))
        return row.with_(path=str(path.resolve()), duration_s=w.duration_s)

    return ctx.map(one, rows)


def stage_prepare(rows, ctx: Context):
    return assign_splits(prepare_rows(rows, ctx), ctx.cfg)


def assign_splits(rows, cfg: PipelineConfig):
    """Apply the per-source class filter and split unassigned rows train/devel."""
    allowed = cfg.class_filter()
    kept = [r for r in rows
            if r.split == "test" or r.source not in allowed or r.label in allowed[r.source]]
    pending = [r for r in kept if r.split == "unassigned"]
    if not pending:
        return kept
    if any(r.label == "unknown" for r in pending):
        raise DataError("rows with unknown labels cannot be assigned to train/devel")
    train_ids, _ = split_train_dev([{"id": r.id, "label": r.label, "source": r.source} for r in pending],
                                   cfg.split_fraction, cfg.seed)
    train_ids = set(train_ids)
    return [r.with_(split="train" if r.id in train_ids else "devel") if r.split == "unassigned" else r
            for r in kept]


def stage_detect(rows, ctx: Context):
    def one(row):
        w = ctx.waveform(row)
        try:
            p = predict_cough_probability(ctx.model, extract_detection_features(w)).probability
        except EmptySignal:
            p = 0.0
        return row.with_(detection_prob=p)

    scored = ctx.map(one, rows)
    ctx.detections.extend(scored)
    return [r for r in scored if r.detection_prob >= ctx.cfg.threshold]


def stage_segment(rows, ctx: Context):
    seg_cfg = ctx.cfg.segmenter_config()
    out = ctx.out_dir / "segments"

    def one(row):
        w = ctx.waveform(row)
        bounds = segment(w, seg_cfg)
        method = seg_cfg.method
        if not bounds:
            # nothing found: the whole recording stands as its own segment
            bounds = [SegmentBounds(0, len(w), row.id, 0)] if len(w) else []
            method = "whole"
        new = []
        for b in bounds:
            piece = extract_segment(w, b)
            sid = f"{row.id}_{b.index}"
            path = out / f"{sid}.wav"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_wav(piece, "32f"))
            new.append(row.with_(id=sid, path=str(path.resolve()), parent_id=row.id,
                                 segment_index=b.index, start_sample=b.start_sample,
                                 end_sample=b.end_sample, seg_method=method,
                                 duration_s=piece.duration_s))
        return new

    return [r for group in ctx.map(one, rows) for r in group]


def stage_featurize(rows, ctx: Context):
    out = ctx.out_dir / "features"

    def one(row):
        L = log_mel(ctx.waveform(row))
        path = out / f"{row.id}.lmel"
        save_logmel(path, L)
        return row.with_(feature_path=str(path.resolve()))

    return ctx.map(one, rows)


def stage_augment(rows, ctx: Context):
    cfg = ctx.cfg
    acfg = cfg.augment_config()
    out = ctx.out_dir / "augmented"
    base = [r for r in rows if r.split == "train" and not r.augment]
    for r in base:
        if not r.feature_path:
            raise DataError(f"row '{r.id}' has no features; run featurize first")

    def save(row, L, tag, **extra):
        path = out / f"{row.id}~{tag}.lmel"
        save_logmel(path, L)
        return row.with_(id=f"{row.id}~{tag}", parent_id=row.id, feature_path=str(path.resolve()),
                         augment=tag.rstrip("0123456789"), **extra)

    def one(row):
        made = []
        if cfg.spec_augment:
            for c in range(cfg.spec_copies):
                rng = aug.item_rng(cfg.seed, row.id, f"spec{c}")
                made.append(save(row, aug.spec_augment(load_logmel(row.feature_path), acfg, rng),
                                 f"specaugment{c}"))
        if ctx.noise_bank:
            clean = ctx.waveform(row)
            for c in range(cfg.noise_copies):
                rng = aug.item_rng(cfg.seed, row.id, f"noise{c}")
                noise_row = ctx.noise_bank[int(rng.integers(len(ctx.noise_bank)))]
                noise = resample(ctx.waveform(noise_row), clean.sample_rate_hz)
                try:
                    noisy = aug.add_noise(clean, noise, aug.random_snr(acfg, rng), rng)
                except SilentInput:
                    continue
                made.append(save(row, log_mel(noisy), f"noise{c}"))
        if cfg.mixup_level == "feature" and len(base) > 1:
            for c in range(cfg.mixup_copies):
                rng = aug.item_rng(cfg.seed, row.id, f"mixup{c}")
                j = int(rng.integers(len(base) - 1))
                partner = base[j if base[j].id != row.id else len(base) - 1]
                lam = aug.sample_mixup_lambda(cfg.alpha, rng)
                L, y = aug.mixup_logmel(load_logmel(row.feature_path), load_logmel(partner.feature_path),
                                        aug.soft_label(row.target), aug.soft_label(partner.target), lam)
                made.append(save(row, L, f"mixup{c}", soft_positive=float(y[1]),
                                 label=row.label if lam >= 0.5 else partner.label))
        return made

    extra = [r for group in ctx.map(one, base) for r in group]
    return list(rows) + extra


def _embedding(row: Row, ctx: Context) -> np.ndarray | None:
    ext = ctx.external_embeddings
    if ext is not None:
        return ext.get(row.id)
    if not row.feature_path:
        raise DataError(f"row '{row.id}' has no features; run featurize first")
    return embed_pooled(load_logmel(row.feature_path))


def _matrix(rows, ctx):
    kept, vecs = [], []
    for r in rows:
        v = _embedding(r, ctx)
        if v is None:
            if r.augment:
                continue
            raise DataError(f"no embedding for row '{r.id}'")
        kept.append(r)
        vecs.append(v)
    if not vecs:
        return kept, np.zeros((0, 0))
    return kept, np.vstack(vecs)


def stage_train(rows, ctx: Context):
    train_rows = [r for r in rows if r.split == "train"]
    if any(r.split == "test" for r in rows):
        log.warning("test rows present at train stage are ignored")
    train_rows, X = _matrix(train_rows, ctx)
    if len(train_rows) < 2:
        raise DataError("fewer than two training rows")
    if ctx.cfg.standardize:
        mean, std = X.mean(axis=0), X.std(axis=0)
        std = np.where(std > 1e-8, std, 1.0)
    else:
        mean, std = np.zeros(X.shape[1]), np.ones(X.shape[1])
    result = train((X - mean) / std, [r.target for r in train_rows], ctx.cfg.train_config())
    ctx.head, ctx.mean, ctx.std = result.head, mean, std
    save_head(ctx.out_dir / "head.npz", result.head, mean, std)
    with open(ctx.out_dir / "loss_history.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(result.history))
    ctx.history = result.history
    return rows


def predict_rows(rows, ctx: Context):
    rows, X = _matrix(rows, ctx)
    if not rows:
        return rows, np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
    act = forward(ctx.head, (X - ctx.mean) / ctx.std)
    return rows, act, np.atleast_1d(predict_from_activations(act))


def write_metrics(path, report: MetricsReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in report.rows():
            w.writerow([k, repr(v) if isinstance(v, float) else v])


def _write_predictions(path, rows, act, preds):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "split", "label", "activation_negative", "activation_positive", "prediction"])
        for r, a, p in zip(rows, act, preds):
            w.writerow([r.id, r.split, r.label, repr(float(a[0])), repr(float(a[1])),
                        "positive" if p else "negative"])


def _metrics_for(rows, ctx, name):
    labelled = [r for r in rows if r.label in ("positive", "negative") and not r.augment]
    rows, act, preds = predict_rows(labelled, ctx)
    _write_predictions(ctx.out_dir / f"predictions_{name}.csv", rows, act, preds)
    labels = [1 if r.label == "positive" else 0 for r in rows]
    report = unweighted_accuracy(preds, labels)
    write_metrics(ctx.out_dir / f"metrics_{name}.csv", report)
    return report


def stage_eval(rows, ctx: Context):
    if ctx.head is None:
        head_path = ctx.out_dir / "head.npz"
        if not head_path.exists():
            raise DataError(f"no trained head at {head_path}; run train first")
        ctx.head, ctx.mean, ctx.std = load_head(head_path)
    dev = [r for r in rows if r.split == "devel"]
    report = _metrics_for(dev, ctx, "devel") if dev else None
    if report is not None:
        write_metrics(ctx.out_dir / "metrics.csv", report)
    ctx.metrics = report
    return rows


STAGE_FUNCS = {
    "prepare": stage_prepare,
    "detect": stage_detect,
    "segment": stage_segment,
    "featurize": stage_featurize,
    "augment": stage_augment,
    "train": stage_train,
    "eval": stage_eval,
}


def ordered_stages(cfg: PipelineConfig):
    order = list(STAGES)
    if cfg.order == "segment_first":
        order[1], order[2] = order[2], order[1]
    enabled = set(cfg.stage_list)
    return [s for s in order if s in enabled]


def run_stage(name, rows, ctx: Context):
    ctx.phase = name
    try:
        return STAGE_FUNCS[name](rows, ctx)
    except StageError:
        raise
    except (CoughkitError, OSError) as e:
        raise StageError(name, e) from e


def _test_side(test_rows, ctx: Context, stages):
    """Push held-back test rows through the feature stages, then score them."""
    ctx.phase = "eval"
    rows = test_rows
    for name in stages:
        if name in ("augment", "train", "eval"):
            continue
        if name == "prepare":
            rows = prepare_rows(rows, ctx)
        else:
            rows = STAGE_FUNCS[name](rows, ctx)
    if not rows:
        return rows, None
    try:
        report = _metrics_for(rows, ctx, "test")
    except CoughkitError as e:
        log.warning("test metrics unavailable: %s", e)
        report = None
    return rows, report


def run_pipeline(cfg: PipelineConfig, reader=None, rows=None) -> RunResult:
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out_dir, reader)
    if rows is None:
        if not cfg.manifest:
            raise ConfigError("no manifest given")
        rows = read_manifest(cfg.manifest)
    test_rows = [r for r in rows if r.split == "test"]
    rows = [r for r in rows if r.split != "test"]
    stages = ordered_stages(cfg)
    counts = {"input": len(rows)}
    manifests = out_dir / "manifests"
    for i, name in enumerate(stages, start=1):
        rows = run_stage(name, rows, ctx)
        counts[name] = len(rows)
        write_manifest(manifests / f"{i:02d}_{name}.csv", rows)
        log.info("%s: %d rows", name, len(rows))
    if ctx.detections:
        write_manifest(manifests / "detection_scores.csv", ctx.detections)

    metrics = ctx.metrics
    test_metrics = None
    if "eval" in stages and cfg.eval_test and test_rows and ctx.head is not None:
        try:
            done, test_metrics = _test_side(test_rows, ctx, stages)
        except StageError:
            raise
        except (CoughkitError, OSError) as e:
            raise StageError("eval", e) from e
        write_manifest(manifests / "test.csv", done)
        counts["test"] = len(done)

    report(rows, out_dir / "report", metrics, ctx.detections or None,
           augmentation_label(cfg) if "augment" in stages else "", counts)
    originals = [r for r in rows if not r.augment]
    return RunResult(metrics, test_metrics, counts,
                     sum(r.split == "train" for r in originals),
                     sum(r.split == "devel" for r in originals),
                     ctx.history)


def augmentation_label(cfg: PipelineConfig) -> str:
    parts = []
    if cfg.mixup_level != "off":
        parts.append("mixup")
    if cfg.spec_augment:
        parts.append("SpecAugment")
    if cfg.noise_manifest:
        parts.append("noise")
    return " + ".join(parts)


def read_metrics(path) -> MetricsReport:
    with open(path, newline="", encoding="utf-8") as f:
        d = {r["metric"]: r["value"] for r in csv.DictReader(f)}
    return MetricsReport(int(d["tp"]), int(d["fp"]), int(d["tn"]), int(d["fn"]),
                         float(d["recall_positive"]), float(d["recall_negative"]),
                         float(d["unweighted_accuracy"]), float(d["accuracy"]))


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def sweep(cfg: PipelineConfig, dimension: str, values, out_csv=None, reader=None, rows=None):
    """One full pipeline run per value, test data excluded. Returns table rows (dicts)."""
    if dimension not in SWEEP_DIMENSIONS:
        raise ConfigError(f"unknown sweep dimension {dimension!r}; choose from {sorted(SWEEP_DIMENSIONS)}")
    key = SWEEP_DIMENSIONS[dimension]
    base = Path(cfg.out_dir)
    table = []
    for i, value in enumerate(values):
        cell_cfg = cfg.override(**{key: value, "out_dir": str(base / f"{dimension}_{i:02d}"),
                                   "eval_test": False})
        rec = {c: "" for c in SWEEP_COLUMNS[dimension]}
        if dimension == "split_ratio":
            rec["train_fraction"] = _fmt(value)
            rec["dev_fraction"] = _fmt(round(1.0 - value, 10))
        else:
            rec[dimension] = _fmt(value)
        try:
            res = run_pipeline(cell_cfg, reader=reader, rows=rows)
            if dimension == "threshold":
                rec["data_count"] = str(res.stage_counts.get("detect", res.stage_counts["input"]))
            if dimension == "split_ratio":
                rec["train_count"] = str(res.train_count)
                rec["dev_count"] = str(res.dev_count)
            rec["ua"] = _fmt(res.metrics.unweighted_accuracy) if res.metrics else ""
            rec["status"] = "ok" if res.metrics else "no-metrics"
        except (CoughkitError, OSError, ValueError) as e:
            log.warning("sweep cell %s=%s failed: %s", dimension, value, e)
            rec["status"] = f"error: {e}"
        table.append(rec)
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, SWEEP_COLUMNS[dimension], lineterminator="\n")
            w.writeheader()
            w.writerows(table)
    return table
