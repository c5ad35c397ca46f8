from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from ultraclust import __version__
from ultraclust.cli import main
from ultraclust.core import HierTree, SimilarityMatrix, Ultrametric
from ultraclust.io import read_tree, write_similarity, write_tree, write_ultrametric


@pytest.fixture
def ones3(tmp_path):
    p = tmp_path / "ones3.csv"
    write_similarity(SimilarityMatrix(np.ones((3, 3))), p)
    return p


@pytest.fixture
def blobs(tmp_path):
    out = tmp_path / "blobs"
    assert main(["synth", "--n", "16", "--seed", "2", "--out-dir", str(out)]) == 0
    return out


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_solve_writes_artifacts(ones3, tmp_path):
    out = tmp_path / "run"
    assert main(["solve", str(ones3), "--out-dir", str(out), "--trace"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["tree"]["cost"] in (8.0, 9.0)
    assert rep["bounds"]["layer_ok"] and rep["bounds"]["total_ok"]
    for name in ("timings.json", "layers.csv", "tree.json", "tree.nwk", "trace.jsonl"):
        assert (out / name).exists()
    rows = list(csv.DictReader((out / "layers.csv").open()))
    assert len(rows) == len(rep["layers"])
    assert read_tree(out / "tree.json") == read_tree(out / "tree.nwk")
    for line in (out / "trace.jsonl").read_text().splitlines():
        json.loads(line)


def test_exact(ones3, tmp_path):
    assert main(["exact", str(ones3), "--out-dir", str(tmp_path / "x")]) == 0
    rep = json.loads((tmp_path / "x" / "exact.json").read_text())
    assert rep["cost"] == 8


def test_reports_byte_identical(blobs, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = [str(blobs / "points.csv"), "--seed", "1"]
    assert main(["solve", *args, "--out-dir", str(a)]) == 0
    assert main(["solve", *args, "--out-dir", str(b)]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "layers.csv").read_bytes() == (b / "layers.csv").read_bytes()


def test_compare_schema(blobs, tmp_path):
    out = tmp_path / "cmp"
    code = main(["compare", str(blobs / "points.csv"), "--labels", str(blobs / "labels.csv"), "--out-dir", str(out), "--threads", "2"])
    assert code == 0
    rows = list(csv.DictReader((out / "compare.csv").open()))
    assert [r["algorithm"] for r in rows] == ["pipeline", "single", "average", "complete", "ward", "kmeans"]
    assert list(rows[0]) == ["dataset", "algorithm", "kernel", "f", "err"]
    for r in rows:
        assert 0 <= float(r["err"]) <= 1


@pytest.mark.parametrize("method", ["single", "average", "complete", "ward", "kmeans"])
def test_baseline(method, blobs, tmp_path):
    out = tmp_path / method
    code = main(["baseline", str(blobs / "points.csv"), "--labels", str(blobs / "labels.csv"), "--method", method, "--out-dir", str(out)])
    assert code == 0
    rep = json.loads((out / f"{method}.json").read_text())
    assert 0 <= rep["err"] <= 1


def test_check_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.nwk"
    write_tree(HierTree.from_nested(((0, 1), 2)), good)
    assert main(["check", str(good)]) == 0
    bad = tmp_path / "trivial.csv"
    write_ultrametric(Ultrametric(np.ones((3, 3)) - np.eye(3)), bad)
    assert main(["check", str(good), str(bad)]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_degenerate_exit_code(tmp_path):
    zero = tmp_path / "zero.csv"
    write_similarity(SimilarityMatrix(np.zeros((5, 5))), zero)
    assert main(["solve", str(zero), "--out-dir", str(tmp_path / "z")]) == 3
    assert main(["solve", str(zero), "--out-dir", str(tmp_path / "z"), "--allow-degenerate"]) == 0


def test_input_errors(tmp_path, ones3):
    assert main(["solve", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path / "m")]) == 4
    broken = tmp_path / "broken.csv"
    broken.write_text("n=2\n0,1\n1,oops\n")
    assert main(["solve", str(broken), "--out-dir", str(tmp_path / "m")]) == 4
    assert main(["solve", str(ones3), "--epsilon", "2", "--out-dir", str(tmp_path / "m")]) == 4
    assert main(["check", str(broken)]) == 4


def test_config_and_environment(ones3, tmp_path, monkeypatch):
    conf = tmp_path / "run.toml"
    conf.write_text('epsilon = 0.25\nout-dir = "%s"\n' % (tmp_path / "from_config"))
    assert main(["solve", str(ones3), "--config", str(conf)]) == 0
    rep = json.loads((tmp_path / "from_config" / "report.json").read_text())
    assert rep["epsilon"] == 0.25
    monkeypatch.setenv("ULTRACLUST_OUT_DIR", str(tmp_path / "from_env"))
    assert main(["solve", str(ones3), "--config", str(conf)]) == 0
    assert (tmp_path / "from_env" / "report.json").exists()
    assert main(["solve", str(ones3), "--config", str(conf), "--out-dir", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "report.json").exists()
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 1\n")
    assert main(["solve", str(ones3), "--config", str(bad)]) == 4
