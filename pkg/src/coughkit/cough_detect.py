"""Cough detection: 18 acoustic features scored by a gradient-boosted tree ensemble.

Feature definitions (spectral ones are computed per STFT frame on the
magnitude spectrum ``S_k`` at bin frequencies ``f_k`` and averaged over frames
that carry energy):

=====================  =======================================================
zcr                    sign changes between adjacent samples / signal length
rms                    sqrt(mean(x^2)) over the whole signal
crest_factor           max|x| / rms
dominant_freq_hz       frequency of the largest magnitude bin
spectral_centroid_hz   sum(f S) / sum(S)
spectral_rolloff85_hz  lowest f_k where the cumulative power reaches 85 %
spectral_bandwidth_hz  sqrt(sum((f - centroid)^2 S) / sum(S))
spectral_flatness      geometric / arithmetic mean of the power spectrum
spectral_slope         least-squares slope of S against f (per Hz)
spectral_decrease      sum_{k>=2} (S_k - S_1)/(k - 1) / sum_{k>=2} S_k
spectral_skewness      third standardized moment of the S-weighted distribution of f
spectral_kurtosis      fourth standardized moment of the same distribution
mfcc_mean_1..6         time average of MFCC coefficients 1..6 (c0 excluded)
=====================  =======================================================
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import Waveform
from .dsp import frame_signal, log_compress, mel_filterbank, mfcc
from .errors import (CyclicTree, EmptySignal, InvalidThreshold, ModelSyntaxError,
                     UnknownFeature)

FEATURE_NAMES = (
    "zcr", "rms", "crest_factor", "dominant_freq_hz", "spectral_centroid_hz",
    "spectral_rolloff85_hz", "spectral_bandwidth_hz", "spectral_flatness",
    "spectral_slope", "spectral_decrease", "spectral_skewness", "spectral_kurtosis",
    "mfcc_mean_1", "mfcc_mean_2", "mfcc_mean_3", "mfcc_mean_4", "mfcc_mean_5", "mfcc_mean_6",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
N_FEATURES = len(FEATURE_NAMES)

FRAME_LEN = 1024
FRAME_HOP = 320
ROLLOFF = 0.85
DEMO_MODEL = Path(__file__).parent / "data" / "demo_detector.json"


@dataclass(frozen=True)
class AcousticFeatureVector:
    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} features, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])

    def as_dict(self) -> dict:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


def _spectral_frame_features(mag: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Rows of [dominant, centroid, rolloff, bandwidth, flatness, slope, decrease,
    skewness, kurtosis] for frames with non-zero energy."""
    power = mag ** 2
    total = mag.sum(axis=1, keepdims=True)
    p = mag / total
    centroid = p @ freqs
    dev = freqs[None, :] - centroid[:, None]
    var = np.sum(p * dev ** 2, axis=1)
    bandwidth = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(var > 0, np.sum(p * dev ** 3, axis=1) / var ** 1.5, 0.0)
        kurt = np.where(var > 0, np.sum(p * dev ** 4, axis=1) / var ** 2, 0.0)
    dominant = freqs[np.argmax(mag, axis=1)]

    cum = np.cumsum(power, axis=1)
    rolloff = freqs[np.argmax(cum >= ROLLOFF * cum[:, -1:], axis=1)]

    tiny = np.finfo(np.float64).tiny
    geo = np.exp(np.mean(np.log(np.maximum(power, tiny)), axis=1))
    flatness = np.clip(geo / np.mean(power, axis=1), 0.0, 1.0)

    fc = freqs - freqs.mean()
    slope = (mag - mag.mean(axis=1, keepdims=True)) @ fc / np.dot(fc, fc)

    k = np.arange(1, mag.shape[1])
    rest = mag[:, 1:].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        decrease = np.where(rest > 0, ((mag[:, 1:] - mag[:, :1]) / k).sum(axis=1) / rest, 0.0)
    return np.column_stack([dominant, centroid, rolloff, bandwidth, flatness, slope,
                            decrease, skew, kurt])


def extract_detection_features(w: Waveform, frame_len: int = FRAME_LEN,
                               hop: int = FRAME_HOP) -> AcousticFeatureVector:
    x = w.samples
    if len(x) < frame_len:
        raise EmptySignal(f"signal of {len(x)} samples is shorter than one {frame_len}-sample frame")
    rms = float(np.sqrt(np.mean(x ** 2)))
    if rms == 0.0:
        return AcousticFeatureVector(np.zeros(N_FEATURES), degenerate=True)

    zcr = float(np.count_nonzero(x[:-1] * x[1:] < 0)) / len(x)
    crest = float(np.max(np.abs(x))) / rms

    frames = frame_signal(x, frame_len, hop)
    window = np.hanning(frame_len + 1)[:-1]
    mag = np.abs(np.fft.rfft(frames * window, axis=1))
    active = mag.sum(axis=1) > 0
    freqs = np.fft.rfftfreq(frame_len, 1.0 / w.sample_rate_hz)
    spectral = _spectral_frame_features(mag[active], freqs).mean(axis=0)

    fb = mel_filterbank(64, 0.0, None, frame_len, w.sample_rate_hz)
    mel = (mag[active] ** 2) @ fb.weights.T
    ceps = mfcc(log_compress(mel), n_coeffs=6, include_c0=False).mean(axis=0)

    return AcousticFeatureVector(np.concatenate([[zcr, rms, crest], spectral, ceps]))


@dataclass(frozen=True)
class TreeNode:
    """Internal node when ``leaf`` is None. Routes left when x[feature] < threshold."""
    feature_index: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    default_left: bool = True
    leaf: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


@dataclass(frozen=True)
class TreeEnsembleModel:
    trees: tuple
    base_score: float = 0.0
    feature_names: tuple = field(default=FEATURE_NAMES)


@dataclass(frozen=True)
class DetectionResult:
    probability: float
    source_id: str = ""


def _fail(msg, path):
    raise ModelSyntaxError(msg, path=path)


def _build_tree(nodes, path):
    if not isinstance(nodes, list) or not nodes:
        _fail("a tree must be a non-empty array of nodes", path)
    by_id = {}
    for i, node in enumerate(nodes):
        npath = f"{path}[{i}]"
        if not isinstance(node, dict):
            _fail("node must be an object", npath)
        nid = node.get("id")
        if not isinstance(nid, int) or isinstance(nid, bool):
            _fail("node 'id' must be an integer", npath)
        if nid in by_id:
            _fail(f"duplicate node id {nid}", npath)
        by_id[nid] = (node, npath)
    root_id = nodes[0]["id"]

    referenced = set()
    for node, npath in by_id.values():
        if "leaf" in node:
            extra = set(node) - {"id", "leaf"}
            if extra:
                _fail(f"leaf node has unexpected fields {sorted(extra)}", npath)
            if not _is_number(node["leaf"]):
                _fail("'leaf' must be a finite number", npath)
            continue
        for key in ("split", "threshold", "yes", "no", "missing"):
            if key not in node:
                _fail(f"internal node missing '{key}'", npath)
        extra = set(node) - {"id", "split", "threshold", "yes", "no", "missing"}
        if extra:
            _fail(f"internal node has unexpected fields {sorted(extra)}", npath)
        if not isinstance(node["split"], str):
            _fail("'split' must be a feature name", npath)
        if node["split"] not in FEATURE_INDEX:
            raise UnknownFeature(f"unknown feature '{node['split']}' at {npath}")
        if not _is_number(node["threshold"]):
            _fail("'threshold' must be a finite number", npath)
        for key in ("yes", "no"):
            child = node[key]
            if not isinstance(child, int) or isinstance(child, bool) or child not in by_id:
                _fail(f"'{key}' references unknown node {child!r}", npath)
            referenced.add(child)
        if node["missing"] not in (node["yes"], node["no"]):
            _fail("'missing' must equal 'yes' or 'no'", npath)
        if node["yes"] == node["no"]:
            _fail("'yes' and 'no' must differ", npath)

    # reject cycles and shared subtrees before materializing
    state = {}

    def visit(nid):
        if state.get(nid) == 1:
            raise CyclicTree(f"cycle through node {nid} in {path}")
        if state.get(nid) == 2:
            _fail(f"node {nid} has more than one parent", path)
        state[nid] = 1
        node = by_id[nid][0]
        if "leaf" not in node:
            visit(node["yes"])
            visit(node["no"])
        state[nid] = 2

    if root_id in referenced:
        raise CyclicTree(f"root node {root_id} is referenced as a child in {path}")
    visit(root_id)
    unreachable = set(by_id) - set(state)
    if unreachable:
        _fail(f"unreachable nodes {sorted(unreachable)}", path)

    def make(nid):
        node = by_id[nid][0]
        if "leaf" in node:
            return TreeNode(leaf=float(node["leaf"]))
        return TreeNode(FEATURE_INDEX[node["split"]], float(node["threshold"]),
                        make(node["yes"]), make(node["no"]), node["missing"] == node["yes"])

    return make(root_id)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_model(text: str) -> TreeEnsembleModel:
    """Parse and validate a tree-ensemble document (see docs/formats.md)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelSyntaxError(e.msg, line=e.lineno, column=e.colno) from None
    if not isinstance(doc, dict):
        _fail("top level must be an object", "$")
    extra = set(doc) - {"base_score", "feature_names", "trees"}
    if extra:
        _fail(f"unexpected top-level fields {sorted(extra)}", "$")
    for key in ("base_score", "feature_names", "trees"):
        if key not in doc:
            _fail(f"missing '{key}'", "$")
    if not _is_number(doc["base_score"]):
        _fail("'base_score' must be a finite number", "$.base_score")
    names = doc["feature_names"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        _fail("'feature_names' must be an array of strings", "$.feature_names")
    for n in names:
        if n not in FEATURE_INDEX:
            raise UnknownFeature(f"unknown feature '{n}' in feature_names")
    if tuple(names) != FEATURE_NAMES:
        _fail("'feature_names' must list all 18 features in canonical order", "$.feature_names")
    if not isinstance(doc["trees"], list):
        _fail("'trees' must be an array", "$.trees")
    trees = tuple(_build_tree(t, f"$.trees[{i}]") for i, t in enumerate(doc["trees"]))
    return TreeEnsembleModel(trees, float(doc["base_score"]), FEATURE_NAMES)


def load_model(path=DEMO_MODEL) -> TreeEnsembleModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))


def dump_model(m: TreeEnsembleModel) -> str:
    trees = []
    for root in m.trees:
        nodes = []

        def emit(node):
            nid = len(nodes)
            nodes.append(None)
            if node.is_leaf:
                nodes[nid] = {"id": nid, "leaf": node.leaf}
            else:
                yes, no = emit(node.left), emit(node.right)
                nodes[nid] = {"id": nid, "split": FEATURE_NAMES[node.feature_index],
                              "threshold": node.threshold, "yes": yes, "no": no,
                              "missing": yes if node.default_left else no}
            return nid

        emit(root)
        trees.append(nodes)
    return json.dumps({"base_score": m.base_score, "feature_names": list(m.feature_names),
                       "trees": trees}, indent=1)


def tree_value(node: TreeNode, x: np.ndarray) -> float:
    while not node.is_leaf:
        v = x[node.feature_index]
        if math.isnan(v):
            node = node.left if node.default_left else node.right
        else:
            node = node.left if v < node.threshold else node.right
    return node.leaf


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def predict_cough_probability(m: TreeEnsembleModel, x: AcousticFeatureVector | np.ndarray,
                              source_id: str = "") -> DetectionResult:
    v = x.values if isinstance(x, AcousticFeatureVector) else np.asarray(x, dtype=np.float64)
    # one correctly rounded sum, so the result does not depend on tree order
    margin = math.fsum([m.base_score] + [tree_value(t, v) for t in m.trees])
    return DetectionResult(_logistic(margin), source_id)


def filter_by_threshold(results, tau: float):
    if not 0.0 <= tau <= 1.0:
        raise InvalidThreshold(f"threshold must lie in [0, 1], got {tau}")
    return [r for r in results if r.probability >= tau]


def detect(w: Waveform, model: TreeEnsembleModel) -> DetectionResult:
    return predict_cough_probability(model, extract_detection_features(w), w.source_id)
