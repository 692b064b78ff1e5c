import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coughkit.config import PipelineConfig, convert, dump_config, load_config, parse_config_text
from coughkit.errors import ConfigError, DataError
from coughkit.manifest import COLUMNS, Row, read_manifest, write_manifest

text = st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(text, st.sampled_from(["positive", "negative", "unknown"]),
                          st.sampled_from(["train", "devel", "test", "unassigned"]),
                          st.one_of(st.none(), st.floats(0, 1)),
                          st.one_of(st.none(), st.integers(0, 10**9))), max_size=6))
def test_manifest_round_trip(tmp_path_factory, items):
    d = tmp_path_factory.mktemp("m")
    rows = [Row(f"id{i}{src}", str(d / f"w{i}.wav"), lab, src, split, detection_prob=p, start_sample=s)
            for i, (src, lab, split, p, s) in enumerate(items)]
    write_manifest(d / "m.csv", rows)
    assert read_manifest(d / "m.csv") == rows


def test_relative_paths_resolve_against_manifest(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "m.csv").write_text("id,path\na,x/a.wav\n")
    assert read_manifest(tmp_path / "sub" / "m.csv")[0].path == str(tmp_path / "sub" / "x" / "a.wav")
    write_manifest(tmp_path / "sub" / "m2.csv", read_manifest(tmp_path / "sub" / "m.csv"))
    assert (tmp_path / "sub" / "m2.csv").read_text().splitlines()[1].split(",")[1] == "x/a.wav"
    assert (tmp_path / "sub" / "m2.csv").read_text().splitlines()[0] == ",".join(COLUMNS)


@pytest.mark.parametrize("body", [
    "id\na\n",
    "id,path,colour\na,a.wav,red\n",
    "id,path\na,a.wav\na,b.wav\n",
    "id,path,label\na,a.wav,maybe\n",
    "id,path,split\na,a.wav,holdout\n",
    "id,path,detection_prob\na,a.wav,1.5\n",
    "id,path,start_sample\na,a.wav,ten\n",
    "id,path,duration_s\na,a.wav,long\n",
])
def test_manifest_rejections(tmp_path, body):
    (tmp_path / "m.csv").write_text(body)
    with pytest.raises(DataError):
        read_manifest(tmp_path / "m.csv")


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        read_manifest(tmp_path / "none.csv")


def test_target():
    assert Row("a", "p", "positive").target == 1.0
    assert Row("a", "p", "negative").target == 0.0
    assert Row("a", "p", "negative", soft_positive=0.25).target == 0.25


def test_config_parse_and_types():
    vals = parse_config_text("# comment\nseed = 7\nthreshold=0.8  # inline\nspec-augment = off\n\n")
    assert vals == {"seed": 7, "threshold": 0.8, "spec_augment": False}
    for bad in ("seed", "seed = x", "colour = red", "spec_augment = maybe"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)
    assert convert("lr", " 0.5 ") == 0.5


def test_cli_value_wins_over_file(tmp_path):
    (tmp_path / "c.cfg").write_text("seed = 1\nthreshold = 0.6\nmanifest = data/m.csv\n")
    cfg = load_config(tmp_path / "c.cfg", threshold=0.8, epochs=None)
    assert cfg.seed == 1 and cfg.threshold == 0.8
    assert cfg.manifest == str(tmp_path / "data" / "m.csv")
    assert cfg.epochs == PipelineConfig().epochs
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_dump_round_trip():
    cfg = PipelineConfig(seed=4, threshold=0.7, spec_augment=False, manifest="m.csv")
    # empty values stand for the defaults, so they are dropped before parsing
    lines = [line for line in dump_config(cfg).splitlines() if not line.endswith("= ")]
    assert PipelineConfig(**parse_config_text("\n".join(lines))) == cfg


@pytest.mark.parametrize("changes", [dict(threshold=1.5), dict(epochs=0), dict(split_fraction=1.0),
                                     dict(segmenter="energy"), dict(order="random"),
                                     dict(stages="prepare,cook"), dict(mixup_level="pixel")])
def test_config_validation(changes):
    PipelineConfig(seed=1).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(seed=1, **changes).validate()


def test_seed_and_paths_checked(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig().validate()
    with pytest.raises(ConfigError):
        PipelineConfig(seed=1, manifest=str(tmp_path / "absent.csv")).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(seed=1, source_class_filter="nolabel").validate()
