import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coughkit.audio_io import Waveform
from coughkit.cough_detect import (DEMO_MODEL, FEATURE_INDEX, FEATURE_NAMES, AcousticFeatureVector,
                                   DetectionResult, detect, dump_model, extract_detection_features,
                                   filter_by_threshold, load_model, parse_model,
                                   predict_cough_probability)
from coughkit.errors import (CoughkitError, CyclicTree, EmptySignal, InvalidThreshold,
                             ModelSyntaxError, UnknownFeature)
from coughkit.synth import SynthSpec, make_item

from conftest import tone

CORPUS = Path(__file__).parent / "data" / "model_conformance"


# --- oracle ------------------------------------------------------------------

def enumerate_paths(nodes):
    """Every root-to-leaf path of a node-list tree as (conditions, leaf value).

    A condition is (feature, threshold, goes_yes, nan_goes_yes)."""
    by_id = {n["id"]: n for n in nodes}
    out = []

    def walk(nid, conds):
        n = by_id[nid]
        if "leaf" in n:
            out.append((conds, n["leaf"]))
            return
        nan_yes = n["missing"] == n["yes"]
        walk(n["yes"], conds + [(n["split"], n["threshold"], True, nan_yes)])
        walk(n["no"], conds + [(n["split"], n["threshold"], False, nan_yes)])

    walk(nodes[0]["id"], [])
    return out


def holds(cond, x):
    feat, thr, goes_yes, nan_yes = cond
    v = x[FEATURE_NAMES.index(feat)]
    took_yes = nan_yes if math.isnan(v) else v < thr
    return took_yes == goes_yes


def oracle_probability(doc, x):
    margin = Fraction(doc["base_score"])
    for nodes in doc["trees"]:
        hits = [leaf for conds, leaf in enumerate_paths(nodes) if all(holds(c, x) for c in conds)]
        assert len(hits) == 1
        margin += Fraction(hits[0])
    z = float(margin)  # exact sum, rounded once
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def random_ensemble(rng, max_trees=3, max_depth=3):
    trees = []
    for _ in range(int(rng.integers(0, max_trees + 1))):
        nodes = []

        def grow(depth):
            nid = len(nodes)
            nodes.append(None)
            if depth == max_depth or rng.random() < 0.25:
                nodes[nid] = {"id": nid, "leaf": float(rng.normal())}
            else:
                yes, no = grow(depth + 1), grow(depth + 1)
                nodes[nid] = {"id": nid, "split": FEATURE_NAMES[int(rng.integers(18))],
                              "threshold": float(np.round(rng.normal(), 1)), "yes": yes, "no": no,
                              "missing": yes if rng.random() < 0.5 else no}
            return nid

        grow(0)
        # relabel ids and shuffle everything but the root
        perm = rng.permutation(len(nodes)) + 100
        relabel = {i: int(perm[i]) for i in range(len(nodes))}
        for n in nodes:
            n["id"] = relabel[n["id"]]
            for k in ("yes", "no", "missing"):
                if k in n:
                    n[k] = relabel[n[k]]
        rest = nodes[1:]
        order = rng.permutation(len(rest))
        trees.append([nodes[0]] + [rest[i] for i in order])
    return {"base_score": float(rng.normal()), "feature_names": list(FEATURE_NAMES), "trees": trees}


def random_inputs(rng, doc, n=20):
    thresholds = [nd["threshold"] for t in doc["trees"] for nd in t if "threshold" in nd] or [0.0]
    xs = []
    for _ in range(n):
        x = np.round(rng.normal(size=18), 1)  # coarse grid hits thresholds exactly
        x[rng.random(18) < 0.1] = np.nan
        if rng.random() < 0.3:
            x[int(rng.integers(18))] = thresholds[int(rng.integers(len(thresholds)))]
        xs.append(x)
    return xs


def test_ensemble_matches_path_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        doc = random_ensemble(rng)
        model = parse_model(json.dumps(doc))
        for x in random_inputs(rng, doc):
            assert predict_cough_probability(model, x).probability == oracle_probability(doc, x)


def test_tree_order_invariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        doc = random_ensemble(rng)
        rev = dict(doc, trees=doc["trees"][::-1])
        m1, m2 = parse_model(json.dumps(doc)), parse_model(json.dumps(rev))
        for x in random_inputs(rng, doc, 5):
            assert predict_cough_probability(m1, x).probability == predict_cough_probability(m2, x).probability


def test_dump_parse_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = parse_model(json.dumps(random_ensemble(rng)))
        assert parse_model(dump_model(m)) == m


# --- worked examples -----------------------------------------------------------

def _doc(trees, base=0.0):
    return json.dumps({"base_score": base, "feature_names": list(FEATURE_NAMES), "trees": trees})


STUMP = [{"id": 0, "split": "zcr", "threshold": 0.5, "yes": 1, "no": 2, "missing": 1},
         {"id": 1, "leaf": -1.0}, {"id": 2, "leaf": 1.0}]


def test_empty_ensemble_is_half():
    assert predict_cough_probability(parse_model(_doc([])), np.zeros(18)).probability == 0.5


def test_single_leaf_document():
    m = parse_model(_doc([[{"id": 0, "leaf": 0.3}]]))
    assert len(m.trees) == 1 and m.trees[0].leaf == 0.3


def test_stump_probability():
    x = np.zeros(18)
    x[FEATURE_INDEX["zcr"]] = 0.7
    p = predict_cough_probability(parse_model(_doc([STUMP])), x).probability
    assert p == pytest.approx(1 / (1 + math.exp(-1.0)), abs=0) and round(p, 4) == 0.7311
    x[FEATURE_INDEX["zcr"]] = 0.5  # equal goes right (strict less-than)
    assert predict_cough_probability(parse_model(_doc([STUMP])), x).probability > 0.5


def test_two_stumps_sum():
    s2 = [dict(STUMP[0], split="rms"), {"id": 1, "leaf": -1.0}, {"id": 2, "leaf": 3.0}]
    p = predict_cough_probability(parse_model(_doc([STUMP, s2])), np.zeros(18)).probability
    assert round(p, 4) == 0.1192


def test_nan_follows_missing_branch():
    x = np.zeros(18)
    x[0] = np.nan
    m = parse_model(_doc([STUMP]))
    assert predict_cough_probability(m, x).probability == pytest.approx(1 / (1 + math.e))
    flipped = [dict(STUMP[0], missing=2)] + STUMP[1:]
    assert predict_cough_probability(parse_model(_doc([flipped])), x).probability == pytest.approx(
        1 / (1 + math.exp(-1)))


def test_spectral_decrease_index():
    t = [{"id": 0, "split": "spectral_decrease", "threshold": 0.0, "yes": 1, "no": 2, "missing": 1},
         {"id": 1, "leaf": 0.0}, {"id": 2, "leaf": 1.0}]
    assert parse_model(_doc([t])).trees[0].feature_index == 9 == FEATURE_INDEX["spectral_decrease"]


def test_missing_child_is_syntax_error():
    t = [{"id": 0, "split": "zcr", "threshold": 0.5, "yes": 1, "missing": 1}, {"id": 1, "leaf": 0.0}]
    with pytest.raises(ModelSyntaxError):
        parse_model(_doc([t]))


def test_syntax_error_carries_position():
    with pytest.raises(ModelSyntaxError) as ei:
        parse_model('{\n  "base_score": 0,\n  "trees": [,]\n}')
    assert ei.value.line == 3 and ei.value.column is not None


@pytest.mark.parametrize("path", sorted(CORPUS.glob("valid_*.json")), ids=lambda p: p.stem)
def test_conformance_valid(path):
    m = parse_model(path.read_text())
    assert m.feature_names == FEATURE_NAMES


@pytest.mark.parametrize("path", sorted(CORPUS.glob("invalid_*.json")), ids=lambda p: p.stem)
def test_conformance_invalid(path):
    with pytest.raises(CoughkitError):
        parse_model(path.read_text())


def test_conformance_error_kinds():
    kinds = {"invalid_unknown_feature": UnknownFeature, "invalid_cycle": CyclicTree,
             "invalid_self_loop": CyclicTree, "invalid_not_json": ModelSyntaxError,
             "invalid_missing_no_child": ModelSyntaxError}
    for stem, exc in kinds.items():
        with pytest.raises(exc):
            parse_model((CORPUS / f"{stem}.json").read_text())


def test_corpus_size():
    assert len(list(CORPUS.glob("valid_*.json"))) >= 10
    assert len(list(CORPUS.glob("invalid_*.json"))) >= 10


# --- features ------------------------------------------------------------------

def test_zero_signal_is_degenerate():
    v = extract_detection_features(Waveform(np.zeros(4000), 16000))
    assert v.degenerate and not v.values.any()


def test_short_signal_raises():
    with pytest.raises(EmptySignal):
        extract_detection_features(Waveform(np.ones(100), 16000))


def test_tone_features():
    v = extract_detection_features(tone(1000))
    bin_hz = 16000 / 1024
    assert abs(v["dominant_freq_hz"] - 1000) <= bin_hz
    # one mel-filter bandwidth around 1 kHz at 64 bands
    assert abs(v["spectral_centroid_hz"] - 1000) <= 130
    assert v["rms"] == pytest.approx(1 / math.sqrt(2), rel=1e-3)
    assert v["crest_factor"] == pytest.approx(math.sqrt(2), rel=1e-3)


def test_alternating_sign_zcr():
    n = 4096
    x = np.where(np.arange(n) % 2, -0.5, 0.5)
    assert extract_detection_features(Waveform(x, 16000))["zcr"] == (n - 1) / n


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_feature_invariants(seed, amp):
    g = np.random.default_rng(seed)
    x = g.standard_normal(int(g.integers(1024, 6000))) * g.uniform(0, 1, 1)
    x[int(g.integers(len(x)))] = 1.0
    v = extract_detection_features(Waveform(x * amp, 16000))
    assert np.all(np.isfinite(v.values))
    assert 0.0 <= v["zcr"] <= 1.0
    assert 0.0 <= v["spectral_flatness"] <= 1.0
    for k in ("dominant_freq_hz", "spectral_centroid_hz", "spectral_rolloff85_hz"):
        assert 0.0 <= v[k] <= 8000.0


def test_feature_vector_shape_check():
    with pytest.raises(ValueError):
        AcousticFeatureVector(np.zeros(17))


# --- thresholding and the bundled model ----------------------------------------

def test_filter_by_threshold():
    rs = [DetectionResult(p, str(i)) for i, p in enumerate([0.95, 0.85, 0.50])]
    assert [r.source_id for r in filter_by_threshold(rs, 0.9)] == ["0"]
    assert filter_by_threshold(rs, 0.0) == rs
    with pytest.raises(InvalidThreshold):
        filter_by_threshold(rs, 1.5)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_filter_monotone(probs, t1, t2):
    lo, hi = sorted((t1, t2))
    rs = [DetectionResult(p, str(i)) for i, p in enumerate(probs)]
    strict = filter_by_threshold(rs, hi)
    assert set(r.source_id for r in strict) <= set(r.source_id for r in filter_by_threshold(rs, lo))


def test_demo_model_separates_bursts_from_hum():
    m = load_model(DEMO_MODEL)
    cough = make_item(1, SynthSpec(seed=3)).waveform
    hum = make_item(0, SynthSpec(seed=3, non_cough_fraction=1.0)).waveform
    assert detect(cough, m).probability >= 0.9
    assert detect(hum, m).probability < 0.5
