"""Two-node sigmoid transfer head on fixed embeddings, trained with AdamW.

Node order is (negative, positive); class 1 is positive.
"""
from __future__ import annotations

import math
import struct
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import LogMelSpectrogram
from .errors import (DegenerateDataset, DimensionMismatch, DuplicateId, EmptyInput, FormatError,
                     InvalidParams, MissingClass, ShapeMismatch)

NEGATIVE, POSITIVE = 0, 1
CLIP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 100
    mixup_alpha: float = 0.5
    mixup: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if not (self.lr > 0 and self.weight_decay >= 0 and self.batch_size >= 1 and self.epochs >= 1):
            raise InvalidParams(f"invalid training config {self}")
        if self.mixup and not self.mixup_alpha > 0:
            raise InvalidParams("mixup_alpha must be positive")
        return self


@dataclass
class LinearHead:
    weights: np.ndarray  # 2 x D
    bias: np.ndarray     # 2

    @classmethod
    def zeros(cls, dim: int) -> "LinearHead":
        return cls(np.zeros((2, dim)), np.zeros(2))

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "LinearHead":
        # same bound as a default torch.nn.Linear
        bound = 1.0 / math.sqrt(dim)
        return cls(rng.uniform(-bound, bound, (2, dim)), rng.uniform(-bound, bound, 2))

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class AdamWState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def like(cls, params) -> "AdamWState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    recall_pos: float
    recall_neg: float
    unweighted_accuracy: float
    accuracy: float

    def rows(self):
        return [("unweighted_accuracy", self.unweighted_accuracy), ("accuracy", self.accuracy),
                ("recall_positive", self.recall_pos), ("recall_negative", self.recall_neg),
                ("tp", self.tp), ("fp", self.fp), ("tn", self.tn), ("fn", self.fn)]


@dataclass
class TrainResult:
    head: LinearHead
    history: list = field(default_factory=list)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def embed_pooled(L: LogMelSpectrogram | np.ndarray) -> np.ndarray:
    """Per-band mean, population std and max over time, concatenated (3 x bands)."""
    v = L.values if isinstance(L, LogMelSpectrogram) else np.asarray(L, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise EmptyInput("need at least one frame to embed")
    return np.concatenate([v.mean(axis=0), v.std(axis=0), v.max(axis=0)])


# EMB1: b"EMB1", u32 count, u32 dim, then per record u16 id length, id (utf-8), dim float32
def encode_embeddings(items: dict) -> bytes:
    dims = {len(v) for v in items.values()}
    if len(dims) > 1:
        raise DimensionMismatch(f"embeddings of different sizes {sorted(dims)}")
    dim = dims.pop() if dims else 0
    out = [b"EMB1", struct.pack("<II", len(items), dim)]
    for key, vec in items.items():
        raw = key.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(np.asarray(vec, dtype="<f4").tobytes())
    return b"".join(out)


def decode_embeddings(data: bytes) -> dict:
    if len(data) < 12 or data[:4] != b"EMB1":
        raise FormatError("not an EMB1 file")
    count, dim = struct.unpack_from("<II", data, 4)
    pos = 12
    out = {}
    for i in range(count):
        if pos + 2 > len(data):
            raise FormatError(f"record {i} truncated")
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        key = data[pos:pos + n].decode("utf-8")
        pos += n
        end = pos + 4 * dim
        if end > len(data):
            raise FormatError(f"record {i} ('{key}') truncated")
        if key in out:
            raise DuplicateId(f"embedding id '{key}' appears twice")
        out[key] = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float64)
        pos = end
    if pos != len(data):
        # a record of a different width makes the tail disagree with the header
        raise DimensionMismatch(f"{len(data) - pos} trailing bytes; records disagree with dim {dim}")
    return out


def save_embeddings(path, items: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_embeddings(items))


def load_embeddings(path) -> dict:
    return decode_embeddings(Path(path).read_bytes())


def _check_dim(h: LinearHead, e: np.ndarray):
    if e.shape[-1] != h.dim:
        raise DimensionMismatch(f"embedding has {e.shape[-1]} dims, head expects {h.dim}")


def logits(h: LinearHead, e) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    _check_dim(h, e)
    return e @ h.weights.T + h.bias


def forward(h: LinearHead, e) -> np.ndarray:
    """sigmoid(W e + b); works on one embedding or a batch (N x D)."""
    return sigmoid(logits(h, e))


def bce_loss(out, target) -> float:
    """Mean over nodes (and batch) of the binary cross-entropy against soft targets."""
    o = np.clip(np.asarray(out, dtype=np.float64), CLIP, 1.0 - CLIP)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(t * np.log(o) + (1.0 - t) * np.log(1.0 - o))))


def loss_and_grads(h: LinearHead, X: np.ndarray, T: np.ndarray):
    """Loss of a batch and its analytic gradients w.r.t. (W, b).

    With sigmoid outputs and BCE the derivative w.r.t. each logit is (o - t);
    the loss averages over N samples and 2 nodes.
    """
    z = logits(h, X)
    o = sigmoid(z)
    loss = bce_loss(o, T)
    d = (o - T) / (2 * X.shape[0])
    return loss, [d.T @ X, d.sum(axis=0)]


def adamw_step(params, grads, state: AdamWState, cfg: TrainConfig):
    """Decoupled-weight-decay Adam update. Returns new params; ``state`` advances in place."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeMismatch("parameter and gradient shapes differ")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        # theta - lr*(m_hat/(sqrt(v_hat)+eps) + wd*theta), decay applied as a factor
        out.append(p * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)))
    return out


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        return np.arange(n)
    # a random cyclic shift of a random permutation has no fixed points
    perm = rng.permutation(n)
    shift = int(rng.integers(1, n))
    partner = np.empty(n, dtype=np.int64)
    partner[perm] = perm[(np.arange(n) + shift) % n]
    return partner


def as_targets(labels) -> np.ndarray:
    """Class indices (N,) or positive-class probabilities -> (N, 2) soft targets."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 2:
        return y
    return np.column_stack([1.0 - y, y])


def train(X, labels, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch AdamW on a fresh head; no early stopping, the last head is returned."""
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("embeddings must form an N x D matrix")
    T = as_targets(labels)
    if T.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} embeddings but {T.shape[0]} labels")
    if X.shape[0] < 2:
        raise DegenerateDataset("need at least two samples")
    hard = T[:, POSITIVE] >= 0.5
    if hard.all() or not hard.any():
        raise DegenerateDataset("training labels contain a single class")

    rng = np.random.default_rng(cfg.seed)
    head = LinearHead.init(X.shape[1], rng)
    params = [head.weights, head.bias]
    state = AdamWState.like(params)
    history = []
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, tb = X[idx], T[idx]
            if cfg.mixup and len(idx) > 1:
                lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
                partner = _derangement(len(idx), rng)
                xb = lam * xb + (1.0 - lam) * xb[partner]
                tb = lam * tb + (1.0 - lam) * tb[partner]
            loss, grads = loss_and_grads(LinearHead(*params), xb, tb)
            params = adamw_step(params, grads, state, cfg)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
    return TrainResult(LinearHead(*params), history)


def predict(h: LinearHead, e) -> np.ndarray | int:
    """argmax over (negative, positive) activations; ties go to negative."""
    o = forward(h, e)
    cls = (o[..., POSITIVE] > o[..., NEGATIVE]).astype(np.int64)
    return int(cls) if cls.ndim == 0 else cls


def predict_from_activations(o) -> np.ndarray | int:
    o = np.asarray(o, dtype=np.float64)
    cls = (o[..., POSITIVE] > o[..., NEGATIVE]).astype(np.int64)
    return int(cls) if cls.ndim == 0 else cls


def unweighted_accuracy(preds, labels) -> MetricsReport:
    p = np.asarray(preds).astype(np.int64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape:
        raise DimensionMismatch(f"{p.size} predictions vs {y.size} labels")
    tp = int(np.sum((p == 1) & (y == 1)))
    fn = int(np.sum((p != 1) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fp = int(np.sum((p != 0) & (y == 0)))
    if tp + fn == 0 or tn + fp == 0:
        raise MissingClass("both classes must be present in the labels")
    rp = tp / (tp + fn)
    rn = tn / (tn + fp)
    return MetricsReport(tp, fp, tn, fn, rp, rn, (rp + rn) / 2.0, (tp + tn) / y.size)


def split_train_dev(rows, train_fraction: float, seed: int,
                    key=lambda r: (r["label"], r["source"]), ident=lambda r: r["id"]):
    """Stratified, seeded train/dev partition of ``rows``.

    The overall train count is round-half-up(N * fraction). That total is first
    shared among the top-level groups (the first element of the key, the label)
    by largest remainder; inside each group every stratum gets
    floor(n_s * fraction) and the group's spare slots go to its strata with the
    largest remainders (ties by stratum order). Every stratum therefore lands
    within one item of n_s * fraction. Returns (train_ids, dev_ids).
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidParams(f"train fraction must lie in (0, 1), got {train_fraction}")
    strata = defaultdict(list)
    for r in rows:
        strata[key(r)].append(ident(r))
    keys = sorted(strata)
    ids_all = [i for k in keys for i in strata[k]]
    if len(set(ids_all)) != len(ids_all):
        raise DuplicateId("row ids must be unique")
    total = int(math.floor(len(ids_all) * train_fraction + 0.5 + 1e-9))
    base = {k: int(math.floor(len(strata[k]) * train_fraction + 1e-9)) for k in keys}
    rem = {k: len(strata[k]) * train_fraction - base[k] for k in keys}

    top = lambda k: k[0] if isinstance(k, tuple) else k  # noqa: E731
    groups = defaultdict(list)
    for k in keys:
        groups[top(k)].append(k)
    quota = {g: sum(len(strata[k]) for k in ks) * train_fraction for g, ks in groups.items()}
    share = {g: int(math.floor(q + 1e-9)) for g, q in quota.items()}
    for g in sorted(groups, key=lambda g: -(quota[g] - share[g]))[:max(total - sum(share.values()), 0)]:
        share[g] += 1
    for g, ks in groups.items():
        extra = share[g] - sum(base[k] for k in ks)
        for k in sorted(ks, key=lambda k: -rem[k])[:max(extra, 0)]:
            base[k] += 1

    rng = np.random.default_rng(seed)
    train_ids, dev_ids = [], []
    for k in keys:
        ids = sorted(strata[k])
        if base[k] == 0 or base[k] == len(ids):
            warnings.warn(f"stratum {k} has an empty {'train' if base[k] == 0 else 'dev'} side")
        perm = rng.permutation(len(ids))
        chosen = {ids[j] for j in perm[:base[k]]}
        train_ids += [i for i in ids if i in chosen]
        dev_ids += [i for i in ids if i not in chosen]
    return train_ids, dev_ids


def save_head(path, h: LinearHead, mean=None, std=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = h.dim
    with open(path, "wb") as f:
        np.savez(f, weights=h.weights, bias=h.bias,
                 mean=np.zeros(dim) if mean is None else mean,
                 std=np.ones(dim) if std is None else std)


def load_head(path):
    with np.load(path) as z:
        return LinearHead(z["weights"], z["bias"]), z["mean"], z["std"]
