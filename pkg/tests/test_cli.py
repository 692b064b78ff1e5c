import csv
import subprocess
import sys

import pytest

from coughkit.cli import main
from coughkit.manifest import read_manifest, write_manifest

pytestmark = pytest.mark.filterwarnings("ignore:stratum")


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n-files", "12", "--seed", "2", "--out-dir", str(d / "c")]) == 0
    return d / "c" / "manifest.csv"


def test_synth_writes_manifest(corpus):
    rows = read_manifest(corpus)
    assert len(rows) == 12 and {r.label for r in rows} == {"positive", "negative"}


def test_run_and_report(corpus, tmp_path, capsys):
    assert main(["run", "--manifest", str(corpus), "--out-dir", str(tmp_path / "r"), "--seed", "1",
                 "--epochs", "5"]) == 0
    out = capsys.readouterr().out
    assert "devel unweighted_accuracy," in out
    assert main(["report", "--manifest", str(corpus), "--metrics", str(tmp_path / "r" / "metrics.csv"),
                 "--detections", str(tmp_path / "r" / "manifests" / "detection_scores.csv"),
                 "--out-dir", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.txt").exists()
    with open(tmp_path / "rep" / "detection_counts.csv") as f:
        assert next(csv.reader(f)) == ["threshold", "kept_count"]


def test_single_stage(corpus, tmp_path):
    assert main(["prepare", "--manifest", str(corpus), "--out-dir", str(tmp_path), "--seed", "1"]) == 0
    assert main(["detect", "--manifest", str(tmp_path / "manifests" / "prepare.csv"),
                 "--out-dir", str(tmp_path), "--seed", "1", "--threshold", "0"]) == 0
    det = read_manifest(tmp_path / "manifests" / "detect.csv")
    assert len(det) == 12 and all(r.detection_prob is not None for r in det)


def test_sweep_command(corpus, tmp_path):
    assert main(["sweep", "--manifest", str(corpus), "--out-dir", str(tmp_path), "--seed", "1",
                 "--epochs", "2", "--dimension", "split_ratio", "--values", "0.6,0.8"]) == 0
    with open(tmp_path / "sweep_split_ratio.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0][:2] == ["train_fraction", "dev_fraction"] and len(rows) == 3


def test_config_file_and_flag_precedence(corpus, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"seed = 1\nmanifest = {corpus}\nthreshold = 1.5\n")
    assert main(["prepare", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert main(["prepare", "--config", str(cfg), "--threshold", "0.5", "--out-dir", str(tmp_path)]) == 0


@pytest.mark.parametrize("argv", [
    ["run", "--seed", "1"],
    ["run", "--manifest", "MANIFEST"],
    ["run", "--manifest", "/nonexistent/m.csv", "--seed", "1"],
    ["run", "--manifest", "MANIFEST", "--seed", "1", "--threshold", "2"],
    ["run", "--manifest", "MANIFEST", "--seed", "1", "--config", "/nonexistent.cfg"],
])
def test_config_errors_exit_2(corpus, argv):
    argv = [str(corpus) if a == "MANIFEST" else a for a in argv]
    assert main(argv) == 2


def test_bad_flag_value_exits_2(corpus):
    with pytest.raises(SystemExit) as ei:
        main(["run", "--manifest", str(corpus), "--seed", "one"])
    assert ei.value.code == 2


def test_data_error_exit_3(tmp_path):
    (tmp_path / "m.csv").write_text("id,path,label\na,missing.wav,positive\n")
    assert main(["run", "--manifest", str(tmp_path / "m.csv"), "--seed", "1",
                 "--out-dir", str(tmp_path / "r")]) == 3
    (tmp_path / "bad.csv").write_text("id,path,label\na,a.wav,maybe\n")
    assert main(["prepare", "--manifest", str(tmp_path / "bad.csv"), "--seed", "1",
                 "--out-dir", str(tmp_path / "r")]) == 3


def test_stage_failure_exit_4(corpus, tmp_path, capsys):
    # readable data, but a single class leaves training nothing to separate
    rows = [r.with_(label="positive") for r in read_manifest(corpus)]
    write_manifest(tmp_path / "one.csv", rows)
    assert main(["run", "--manifest", str(tmp_path / "one.csv"), "--seed", "1", "--out-dir", str(tmp_path),
                 "--threshold", "0"]) == 4
    assert "stage 'train' failed" in capsys.readouterr().err


def test_empty_gate_is_a_data_error(corpus, tmp_path):
    assert main(["run", "--manifest", str(corpus), "--seed", "1", "--out-dir", str(tmp_path),
                 "--threshold", "1.0"]) == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "coughkit.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep" in proc.stdout
