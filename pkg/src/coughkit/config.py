"""Pipeline configuration: flat ``key = value`` files, every key mirrored by a CLI flag."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigError, InvalidParams
from .segmentation import SegmenterConfig
from .train_eval import TrainConfig

STAGES = ("prepare", "detect", "segment", "featurize", "augment", "train", "eval")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int | None = None
    manifest: str = ""
    out_dir: str = "run"
    stages: str = ",".join(STAGES)
    order: str = "detect_first"  # or segment_first
    workers: int = 1
    sample_rate: int = 16000
    # detection
    threshold: float = 0.9
    detector_model: str = ""
    # segmentation
    segmenter: str = "hysteresis"
    seg_frame_len: int = 1024
    seg_hop: int = 256
    upper_ratio: float = 2.0
    lower_ratio: float = 0.5
    rms_threshold: float = 0.09
    min_duration_ms: float = 200.0
    merge_gap_ms: float = 100.0
    pad_ms: float = 50.0
    # augmentation
    alpha: float = 0.5
    mixup_level: str = "feature"  # feature | embedding | off
    mixup_copies: int = 1
    spec_augment: bool = True
    spec_copies: int = 1
    n_freq_masks: int = 2
    max_freq_width: int = 8
    n_time_masks: int = 2
    max_time_frac: float = 0.1
    mask_fill: str = "mean"
    noise_manifest: str = ""
    noise_copies: int = 1
    snr_min_db: float = 0.0
    snr_max_db: float = 15.0
    # training / evaluation
    split_fraction: float = 0.85
    source_class_filter: str = ""  # "source:label|label;source2:label"
    lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 100
    embeddings: str = ""
    standardize: bool = True
    eval_test: bool = True

    # derived views -----------------------------------------------------
    @property
    def stage_list(self) -> list[str]:
        return [s.strip() for s in self.stages.split(",") if s.strip()]

    def segmenter_config(self) -> SegmenterConfig:
        return SegmenterConfig(self.segmenter, self.seg_frame_len, self.seg_hop, self.upper_ratio,
                               self.lower_ratio, self.rms_threshold, self.min_duration_ms,
                               self.merge_gap_ms, self.pad_ms)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.alpha, self.n_freq_masks, self.max_freq_width, self.n_time_masks,
                             self.max_time_frac, self.snr_min_db, self.snr_max_db, self.mask_fill,
                             self.seed or 0)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.weight_decay, self.batch_size, self.epochs, self.alpha,
                           self.mixup_level == "embedding", seed=self.seed or 0)

    def class_filter(self) -> dict:
        out = {}
        for part in filter(None, (p.strip() for p in self.source_class_filter.split(";"))):
            if ":" not in part:
                raise ConfigError(f"bad source_class_filter entry {part!r}; want source:label|label")
            src, labels = part.split(":", 1)
            out[src.strip()] = {lab.strip() for lab in labels.split("|") if lab.strip()}
        return out

    def validate(self) -> "PipelineConfig":
        if self.seed is None:
            raise ConfigError("a seed is mandatory (set 'seed' or pass --seed)")
        unknown = set(self.stage_list) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}")
        if self.order not in ("detect_first", "segment_first"):
            raise ConfigError(f"order must be detect_first or segment_first, got {self.order!r}")
        if self.mixup_level not in ("feature", "embedding", "off"):
            raise ConfigError(f"unknown mixup_level {self.mixup_level!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.segmenter_config().validate()
            self.augment_config().validate()
            self.train_config().validate()
        except InvalidParams as e:
            raise ConfigError(str(e)) from None
        self.class_filter()
        for key in ("manifest", "detector_model", "noise_manifest", "embeddings"):
            value = getattr(self, key)
            if value and not Path(value).exists():
                raise ConfigError(f"{key} path {value} does not exist")
        return self

    def override(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


FIELD_TYPES = {f.name: type(f.default) if f.default is not None else int for f in fields(PipelineConfig)}


def convert(key: str, text: str):
    key = key.replace("-", "_")
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {text!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = convert(key.strip(), value)
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    """File values first, then ``overrides`` (CLI flags) on top."""
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        values = parse_config_text(p.read_text(encoding="utf-8"))
        # relative paths in a config file are relative to the file
        for key in ("manifest", "out_dir", "detector_model", "noise_manifest", "embeddings"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(p.parent / values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'' if v is None else str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
