import itertools
import json
import os

import numpy as np
import pytest

from gmmd import cli, io
from gmmd.evaluation import read_metrics
from gmmd.shapes import load_cloud, save_cloud


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def pair(tmp_path):
    assert run("gen", "--n", 120, "--seed", 0, "--out", tmp_path / "x.csv") == 0
    assert run("gen", "--n", 120, "--seed", 0, "--transform", "rotate:1.0472",
               "--out", tmp_path / "y.csv") == 0
    return tmp_path / "x.csv", tmp_path / "y.csv"


TINY = ("--epochs", 2, "--batch-size", 32)


def test_gen_examples(tmp_path):
    assert run("gen", "--shape", "heart", "--n", 4000, "--seed", 0, "--out", tmp_path / "h.csv") == 0
    assert load_cloud(tmp_path / "h.csv").shape == (4000, 2)
    assert run("gen", "--n", 50, "--transform", "embed3d", "--out", tmp_path / "q.csv") == 0
    assert load_cloud(tmp_path / "q.csv").shape == (50, 3)
    assert run("gen", "--n", 50, "--transform", "twist", "--out", tmp_path / "t.csv") == 2
    assert not (tmp_path / "t.csv").exists()


def test_train_writes_all_artifacts(pair, tmp_path):
    out = tmp_path / "run"
    assert run("train", "--x", pair[0], "--y", pair[1], "--lambda", 0.064, *TINY, "--out", out) == 0
    for name in ("f.json", "g.json", "history.csv", "metrics.csv", "manifest.json", "kernels.json"):
        assert (out / name).is_file(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["lambda_x"] == manifest["config"]["lambda_y"] == 0.064
    assert manifest["inputs"]["x"]["sha256"] == cli.sha256(pair[0])
    rows = read_metrics(out / "metrics.csv")
    assert len(rows) == 1 and rows[0]["seconds"] == ""
    assert len(read_metrics(out / "history.csv")) == 2


def test_table_lambda_inverts(pair, tmp_path):
    out = tmp_path / "run"
    assert run("train", "--x", pair[0], "--y", pair[1], "--table-lambda", 4, "--epochs", 0,
               "--out", out) == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert cfg["lambda_x"] == cfg["lambda_y"] == 0.25


def test_train_reruns_are_bit_identical(pair, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--x", pair[0], "--y", pair[1], *TINY, "--out", tmp_path / name) == 0
    for art in ("metrics.csv", "history.csv", "f.json", "g.json"):
        assert (tmp_path / "a" / art).read_bytes() == (tmp_path / "b" / art).read_bytes()


def test_config_errors(pair, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochs": 1, "lamda_x": 0.1}))
    assert run("train", "--x", pair[0], "--y", pair[1], "--config", bad, "--out", tmp_path / "r") == 3
    assert "lamda_x" in capsys.readouterr().err
    bad.write_text(json.dumps({"lr": -1}))
    assert run("train", "--x", pair[0], "--y", pair[1], "--config", bad, "--out", tmp_path / "r") == 3
    assert run("train", "--x", tmp_path / "nope.csv", "--y", pair[1], "--out", tmp_path / "r") == 3
    assert run("train", "--x", pair[0]) == 2
    assert run("train", "--x", pair[0], "--y", pair[1], "--lambda", 1, "--table-lambda", 2,
               "--out", tmp_path / "r") == 2


def test_config_file_values_are_used(pair, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 16, "hidden_dims": [8], "seed": 3}))
    assert run("train", "--x", pair[0], "--y", pair[1], "--config", cfg, "--out", tmp_path / "r") == 0
    doc = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert doc["config"]["hidden_dims"] == [8] and doc["seed"] == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(pair, tmp_path):
    assert run("train", "--x", pair[0], "--y", pair[1], "--lr", 1e300, *TINY,
               "--out", tmp_path / "r") == 4
    assert not (tmp_path / "r" / "metrics.csv").exists()


def test_eval_appends_amortization_row(pair, tmp_path):
    out = tmp_path / "run"
    assert run("train", "--x", pair[0], "--y", pair[1], *TINY, "--out", out) == 0
    run("gen", "--n", 90, "--seed", 7, "--out", tmp_path / "fx.csv")
    run("gen", "--n", 90, "--seed", 7, "--transform", "rotate", "--out", tmp_path / "fy.csv")
    assert run("eval", "--run", out, "--x", tmp_path / "fx.csv", "--y", tmp_path / "fy.csv",
               "--label", "amortization") == 0
    rows = read_metrics(out / "metrics.csv")
    assert [r["label"] for r in rows] == ["train", "amortization"]
    assert rows[1]["n_eval"] == "90"
    assert run("eval", "--run", out, "--x", pair[0], "--y", pair[1]) == 3
    assert run("eval", "--run", tmp_path / "missing", "--x", pair[0], "--y", pair[1]) == 3


def test_gw_tiny_matches_brute_force(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(4, 2))
    perm = rng.permutation(4)
    Q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    Y = (X @ Q)[perm]
    save_cloud(X, tmp_path / "x.csv")
    save_cloud(Y, tmp_path / "y.csv")
    out = tmp_path / "gw"
    assert run("gw", "--x", tmp_path / "x.csv", "--y", tmp_path / "y.csv", "--epsilon", 1e-3,
               "--export-coupling", "--out", out) == 0
    rows = (out / "coupling.csv").read_text().splitlines()
    pi = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert pi.shape == (4, 4)
    assert np.abs(pi.sum(1) - 0.25).max() < 1e-6 and np.abs(pi.sum(0) - 0.25).max() < 1e-6

    from gmmd.gw import gw_cost
    from scipy.spatial.distance import cdist
    CX, CY = cdist(X, X), cdist(Y, Y)
    best = min(itertools.permutations(range(4)),
               key=lambda s: gw_cost(CX, CY, np.eye(4)[list(s)] / 4))
    P = np.eye(4)[list(best)] / 4
    assert 0.5 * np.abs(pi - P).sum() < 1e-2
    assert load_cloud(out / "fx.csv").shape == (4, 2)
    row = read_metrics(out / "metrics.csv")[0]
    assert row["method"] == "gw" and float(row["param"]) == 1e-3


def test_sweep_lambda_grid(tmp_path, monkeypatch):
    monkeypatch.setenv("GMMD_THREADS", "2")
    out = tmp_path / "sw"
    assert run("sweep", "--task", "rotate", "--lambdas", "0.001..0.512x2", "--n", 40,
               "--epochs", 1, "--batch-size", 16, "--out", out) == 0
    rows = read_metrics(out / "metrics.csv")
    assert [float(r["param"]) for r in rows] == [0.001 * 2 ** i for i in range(10)]
    assert run("sweep", "--lambdas", "0.1", "--epsilons", "1", "--out", out) == 2
    monkeypatch.setenv("GMMD_THREADS", "many")
    assert run("sweep", "--lambdas", "0.1", "--out", out) == 2


def test_parse_grid():
    assert cli.parse_grid("5..0.0005x0.1") == [5.0, 0.5, 0.05, 0.005, 0.0005]
    assert cli.parse_grid("0.01,0.1") == [0.01, 0.1]
    assert len(cli.parse_grid("0.001..0.512x2")) == 10
    for bad in ("1..0.1x2", "a..bx2", "1..2x1"):
        with pytest.raises(cli.UsageError):
            cli.parse_grid(bad)


def test_report_is_deterministic(pair, tmp_path):
    out = tmp_path / "run"
    assert run("train", "--x", pair[0], "--y", pair[1], *TINY, "--out", out) == 0
    assert run("report", "--run", out) == 0
    first = {p.name: p.read_bytes() for p in out.glob("*.svg")}
    assert set(first) == {"overlay_x.svg", "overlay_y.svg", "loss.svg"}
    assert run("report", "--run", out) == 0
    assert first == {p.name: p.read_bytes() for p in out.glob("*.svg")}
    assert (out / "overlay_x.csv").read_text().startswith("series,x0,x1\n")


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "metrics.csv"
    target.write_text("old\n")

    def boom(src, dst):
        raise KeyboardInterrupt

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        io.atomic_write_text(target, "new contents\n")
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["metrics.csv"]
