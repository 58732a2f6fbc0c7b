import json
import os
import subprocess
import sys

import pytest

from coindie.cli import main, split_indices
from coindie.io import read_pairs

FAST = ["--voxel-size", "0.2"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--dies", "2", "--coins-per-die", "2", "--out", str(d), "--samples", "12000", "--seed", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def model_path(corpus_dir):
    out = corpus_dir / "model.txt"
    args = ["train", "--pairs", str(corpus_dir / "pairs.csv"), "--out", str(out), "--poses", str(corpus_dir / "poses.csv"), "--quiet"]
    assert main(args + FAST) == 0
    return out


def test_synth_writes_corpus(corpus_dir, capsys):
    names = sorted(os.listdir(corpus_dir))
    assert {"labels.csv", "poses.csv", "pairs.csv", "coin000.ply", "coin003.ply"} <= set(names)
    assert len(read_pairs(corpus_dir / "pairs.csv")) == 6


def test_synth_counts_for_66_coins(tmp_path, capsys):
    assert main(["synth", "--dies", "11", "--coins-per-die", "6", "--out", str(tmp_path), "--samples", "1000"]) == 0
    assert capsys.readouterr().out.strip() == "coins 66 pairs 2145 positive 165"
    pairs = read_pairs(tmp_path / "pairs.csv")
    assert len(pairs) == 2145 and sum(l for *_, l in pairs) == 165


def test_train_reports_counts(corpus_dir, model_path, capsys):
    args = ["train", "--pairs", str(corpus_dir / "pairs.csv"), "--out", str(corpus_dir / "m2.txt"), "--poses", str(corpus_dir / "poses.csv"), "--quiet"]
    assert main(args + FAST) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "pairs 6 positive 2 negative 4"
    assert out[1].startswith("train accuracy") and out[2].startswith("test accuracy")
    assert (corpus_dir / "m2.txt").read_text() == model_path.read_text()


def test_compare_self_is_confident(corpus_dir, model_path, capsys):
    a = str(corpus_dir / "coin000.ply")
    assert main(["compare", a, a, "--model", str(model_path)] + FAST) == 0
    line = capsys.readouterr().out.splitlines()[-1]
    assert line.startswith("probability ") and float(line.split()[1]) > 0.9


def test_register_prints_error(corpus_dir, capsys):
    a, b = str(corpus_dir / "coin000.ply"), str(corpus_dir / "coin001.ply")
    assert main(["register", a, b, "--poses", str(corpus_dir / "poses.csv")] + FAST) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 7 and out[4].startswith("rmse")
    parts = out[6].split()
    assert parts[:2] == ["error", "dR"] and float(parts[2]) < 5.0 and float(parts[5]) < 0.5


def test_cluster_outputs_and_ari(corpus_dir, model_path, tmp_path, capsys):
    args = ["cluster", str(corpus_dir), "--model", str(model_path), "--labels", str(corpus_dir / "labels.csv"), "--out", str(tmp_path)]
    assert main(args + FAST) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["components 2 failures 0", "ARI 1.000000"]
    doc = json.loads((tmp_path / "graph.json").read_text())
    assert doc["components"] == [["coin000", "coin001"], ["coin002", "coin003"]]
    for name in ("matrix.csv", "graph.dot", "graph.json"):
        assert (tmp_path / name).read_text(encoding="utf-8").endswith("\n")


def test_split_indices_is_seeded():
    a, b = split_indices(10, 4)
    assert len(a) == len(b) == 5 and not set(a) & set(b)
    c, _ = split_indices(10, 4)
    assert list(a) == list(c)


def test_missing_file_is_a_data_error(tmp_path, capsys):
    missing = str(tmp_path / "nope.ply")
    assert main(["register", missing, missing]) == 1
    assert "nope.ply" in capsys.readouterr().err


def test_bad_cloud_names_file(tmp_path, capsys):
    bad = tmp_path / "bad.ply"
    bad.write_text("not a ply\n")
    assert main(["register", str(bad), str(bad)]) == 1
    err = capsys.readouterr().err
    assert "bad.ply" in err and "line 1" in err


def test_unknown_config_key(tmp_path, capsys, corpus_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("trails = 5\n")
    a = str(corpus_dir / "coin000.ply")
    assert main(["register", a, a, "--config", str(cfg)]) == 1
    assert "trails" in capsys.readouterr().err


def test_cluster_needs_two_clouds(tmp_path, model_path, capsys):
    assert main(["cluster", str(tmp_path), "--model", str(model_path)]) == 1
    assert "at least two" in capsys.readouterr().err


def test_usage_errors_print_synopsis(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    assert "usage: coindie" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["compare", "a.ply", "b.ply"])
    assert exc.value.code == 2
    assert "--model" in capsys.readouterr().err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "coindie", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("register", "compare", "train", "cluster", "synth", "basin", "border-sweep", "method-table"):
        assert cmd in r.stdout
