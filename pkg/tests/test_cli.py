import csv
import hashlib
import json
import logging
import math
import subprocess
import sys

import numpy as np
import pytest

from spatboost.cli import main, read_table
from spatboost.family import SpatialErrorStructure
from spatboost.simstudy import prediction_metrics
from spatboost.weights import read_weights, spatial_lag

TRUTH = {"X1", "X2", "W.X1", "W.X2"}


def run(*argv):
    return main([str(a) for a in argv])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    code = run("simulate", "--nsim", 1, "--lambda", 0.8, "--q", 20, "--mmax", 50, "--folds", 4,
               "--variants", "ds-ds", "--emit-data", root / "data", "--out", root / "study")
    assert code == 0
    return root / "data"


@pytest.fixture(scope="module")
def fitted(emitted, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = run("fit", "--data", emitted / "train.csv", "--response", "y", "--weights",
               emitted / "train_weights.csv", "--variant", "ds-ds", "--lags", "--seed", 4, "--out", out)
    assert code == 0
    return out


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


class TestWeights:
    def test_circular_ring_400_5(self, tmp_path, capsys):
        out = tmp_path / "w.csv"
        assert run("weights", "--mode", "circular", "--n", 400, "--k", 5, "--normalize", "--out", out) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 4000
        assert {float(r["w"]) for r in rows} == {0.1}
        assert "rows=400 nnz=4000" in capsys.readouterr().out

    def test_knn_collinear(self, tmp_path):
        coords = write_csv(tmp_path / "pts.csv", ["id", "x", "y"], [[1, 0, 0], [2, 1, 0], [3, 3, 0]])
        out = tmp_path / "w.csv"
        assert run("weights", "--mode", "knn", "--coords", coords, "--k", 1, "--out", out) == 0
        W = read_weights(out)
        assert W.nnz == 3
        assert W.toarray()[2, 1] == 1.0

    @pytest.mark.parametrize(
        "argv",
        [
            ("--mode", "circular", "--n", 4, "--k", 2),
            ("--mode", "circular", "--k", 2),
            ("--mode", "knn", "--k", 1),
            ("--mode", "circular", "--n", 10, "--k", 0),
        ],
    )
    def test_invalid_topology(self, tmp_path, argv):
        assert run("weights", *argv, "--out", tmp_path / "w.csv") == 2


class TestFit:
    def test_selects_informative(self, fitted):
        doc = json.loads((fitted / "fit.json").read_text())
        assert TRUTH <= set(doc["selected"])
        assert abs(doc["lambda"]) < 1 and doc["sigma2"] > 0 and doc["m_opt"] >= 1
        assert doc["names"][10] == "W.X1"
        assert len(doc["risk_path"]) == doc["m_opt"] + 1

    def test_manifest(self, fitted, emitted):
        m = json.loads((fitted / "manifest.json").read_text())
        assert m["command"] == "fit" and m["version"]
        assert m["inputs"][str(emitted / "train.csv")] == digest(emitted / "train.csv")
        assert m["config"]["variant"] == "ds-ds" and m["config"]["seed"] == 4
        assert m["duration_seconds"] >= 0

    def test_emitted_directory_has_manifest(self, emitted):
        m = json.loads((emitted / "manifest.json").read_text())
        assert m["command"] == "simulate --emit-data"
        truth = json.loads((emitted / "truth.json").read_text())
        assert truth["lambda"] == 0.8

    def test_coefficient_round_trip(self, fitted, emitted):
        rows = list(csv.DictReader(open(fitted / "coefficients.csv")))
        assert rows[0]["name"] == "(Intercept)"
        coef = {r["name"]: float(r["estimate"]) for r in rows}
        names, data = read_table(emitted / "train.csv")
        W = read_weights(emitted / "train_weights.csv")
        X = data[:, :10]
        Z = np.hstack([X, spatial_lag(W, X)])
        znames = names[:10] + [f"W.{c}" for c in names[:10]]
        eta = coef["(Intercept)"] + Z @ np.array([coef[c] for c in znames])
        stored = np.array(json.loads((fitted / "fit.json").read_text())["fitted"])
        assert np.max(np.abs(eta - stored)) < 1e-10

    def test_deterministic(self, emitted, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"f{k}"
            run("fit", "--data", emitted / "train.csv", "--response", "y", "--weights",
                emitted / "train_weights.csv", "--variant", "gb-gb", "--lags", "--mmax", 100, "--folds", 5,
                "--seed", 2, "--out", out)
            outs.append(out)
        assert digest(outs[0] / "coefficients.csv") == digest(outs[1] / "coefficients.csv")
        assert digest(outs[0] / "fit.json") == digest(outs[1] / "fit.json")

    def test_fgls_high_dimensional_exit_3(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        data = write_csv(tmp_path / "d.csv", [f"x{i}" for i in range(12)] + ["y"], rng.normal(size=(10, 13)))
        run("weights", "--mode", "circular", "--n", 10, "--k", 1, "--normalize", "--out", tmp_path / "w.csv")
        capsys.readouterr()
        code = run("fit", "--data", data, "--response", "y", "--weights", tmp_path / "w.csv",
                   "--variant", "fgls", "--out", tmp_path / "o")
        assert code == 3
        assert "q + 1" in capsys.readouterr().err

    def test_constant_response_exit_3(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = np.column_stack([rng.normal(size=(20, 3)), np.full(20, 2.0)])
        data = write_csv(tmp_path / "d.csv", ["a", "b", "c", "y"], rows)
        run("weights", "--mode", "circular", "--n", 20, "--k", 2, "--normalize", "--out", tmp_path / "w.csv")
        assert run("fit", "--data", data, "--response", "y", "--weights", tmp_path / "w.csv",
                   "--variant", "ls-gb", "--out", tmp_path / "o") == 3

    def test_schema_errors_exit_2(self, tmp_path, emitted):
        na = tmp_path / "na.csv"
        na.write_text("a,y\n1.0,2.0\nNA,3.0\n")
        w = emitted / "train_weights.csv"
        assert run("fit", "--data", na, "--response", "y", "--weights", w, "--out", tmp_path / "o") == 2
        train = emitted / "train.csv"
        assert run("fit", "--data", train, "--response", "z", "--weights", w, "--out", tmp_path / "o") == 2
        assert run("fit", "--data", train, "--response", "y", "--out", tmp_path / "o") == 2
        assert run("fit", "--data", tmp_path / "missing.csv", "--response", "y", "--weights", w,
                   "--out", tmp_path / "o") == 2
        run("weights", "--mode", "circular", "--n", 400, "--k", 1, "--out", tmp_path / "raw.csv")
        assert run("fit", "--data", train, "--response", "y", "--weights", tmp_path / "raw.csv",
                   "--out", tmp_path / "o") == 2

    def test_slx_without_weights(self, emitted, tmp_path):
        assert run("fit", "--data", emitted / "train.csv", "--response", "y", "--variant", "slx-ds",
                   "--mmax", 200, "--folds", 5, "--out", tmp_path / "o") == 0
        doc = json.loads((tmp_path / "o" / "fit.json").read_text())
        assert doc["lambda"] == 0.0 and not doc["lags"]

    def test_standardize_round_trip(self, emitted, tmp_path):
        w = emitted / "train_weights.csv"
        assert run("fit", "--data", emitted / "train.csv", "--response", "y", "--weights", w, "--lags",
                   "--standardize", "--variant", "gb-gb", "--mmax", 100, "--folds", 5, "--out", tmp_path / "o") == 0
        doc = json.loads((tmp_path / "o" / "fit.json").read_text())
        assert set(doc["standardize"]) == set(doc["names"])
        assert run("predict", "--model", tmp_path / "o" / "fit.json", "--data", emitted / "train.csv",
                   "--weights", w, "--out", tmp_path / "p.csv") == 0
        eta = read_table(tmp_path / "p.csv")[1][:, 0]
        assert np.max(np.abs(eta - np.array(doc["fitted"]))) < 1e-10


class TestPredict:
    def test_training_file_reproduces_fitted(self, fitted, emitted, tmp_path):
        assert run("predict", "--model", fitted / "fit.json", "--data", emitted / "train.csv",
                   "--weights", emitted / "train_weights.csv", "--out", tmp_path / "p.csv") == 0
        names, eta = read_table(tmp_path / "p.csv")
        assert names == ["eta"]
        stored = np.array(json.loads((fitted / "fit.json").read_text())["fitted"])
        assert np.max(np.abs(eta[:, 0] - stored)) < 1e-10

    def test_rmsep_matches_metrics(self, fitted, emitted, tmp_path, capsys):
        capsys.readouterr()
        assert run("predict", "--model", fitted / "fit.json", "--data", emitted / "test.csv",
                   "--weights", emitted / "test_weights.csv", "--out", tmp_path / "p.csv") == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        printed = dict(kv.split("=") for kv in line.split())
        doc = json.loads((fitted / "fit.json").read_text())
        names, data = read_table(emitted / "test.csv")
        eta = read_table(tmp_path / "p.csv")[1][:, 0]
        W = read_weights(emitted / "test_weights.csv")
        rmsep, maep, _ = prediction_metrics(data[:, names.index("y")], eta,
                                            SpatialErrorStructure(doc["lambda"], doc["sigma2"], W))
        assert float(printed["RMSEP"]) == pytest.approx(rmsep, rel=1e-9)
        assert float(printed["MAEP"]) == pytest.approx(maep, rel=1e-9)

    def test_stdout_output(self, fitted, emitted, capsys):
        capsys.readouterr()
        assert run("predict", "--model", fitted / "fit.json", "--data", emitted / "test.csv",
                   "--weights", emitted / "test_weights.csv") == 0
        cap = capsys.readouterr()
        assert cap.out.splitlines()[0] == "eta" and len(cap.out.splitlines()) == 401
        assert cap.err.startswith("RMSEP=")

    def test_missing_lag_weights(self, fitted, emitted, tmp_path):
        assert run("predict", "--model", fitted / "fit.json", "--data", emitted / "test.csv",
                   "--out", tmp_path / "p.csv") == 2

    def test_column_mismatch(self, fitted, emitted, tmp_path):
        names, data = read_table(emitted / "test.csv")
        keep = [i for i, nm in enumerate(names) if nm != "X3"]
        bad = write_csv(tmp_path / "bad.csv", [names[i] for i in keep], data[:, keep])
        assert run("predict", "--model", fitted / "fit.json", "--data", bad,
                   "--weights", emitted / "test_weights.csv", "--out", tmp_path / "p.csv") == 2

    def test_unreadable_model(self, emitted, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        assert run("predict", "--model", tmp_path / "m.json", "--data", emitted / "test.csv") == 2


class TestSimulate:
    def test_low_dimensional_single_rep(self, tmp_path):
        out = tmp_path / "o"
        assert run("simulate", "--nsim", 1, "--lambda", 0, "--q", 20, "--mmax", 100, "--folds", 5,
                   "--out", out) == 0
        rows = list(csv.DictReader(open(out / "metrics.csv")))
        assert [r["variant"] for r in rows] == ["ls-gb", "gb-gb", "ds-gb", "ds-ds", "fgls"]
        assert all(r["succeeded"] == "1" for r in rows)
        m = json.loads((out / "manifest.json").read_text())
        assert m["command"] == "simulate" and m["config"]["scenarios"][0]["lam"] == 0.0

    def test_high_dimensional_skip_is_logged(self, tmp_path, caplog):
        out = tmp_path / "o"
        with caplog.at_level(logging.WARNING, logger="spatboost"):
            assert run("simulate", "--nsim", 1, "--q", 800, "--mmax", 60, "--folds", 4, "--out", out) == 0
        assert any("skipping ls-gb, fgls" in r.getMessage() for r in caplog.records)
        rows = list(csv.DictReader(open(out / "metrics.csv")))
        assert [r["variant"] for r in rows] == ["gb-gb", "ds-gb", "ds-ds"]
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["scenarios"][0]["skipped"]) == {"ls-gb", "fgls"}

    def test_neighbourhood_sweep(self, tmp_path):
        out = tmp_path / "o"
        assert run("simulate", "--nsim", 1, "--k", "1,2,3,5,10,20", "--mmax", 20, "--folds", 2,
                   "--variants", "gb-gb", "--out", out) == 0
        rows = list(csv.DictReader(open(out / "metrics.csv")))
        assert [int(r["K"]) for r in rows] == [1, 2, 3, 5, 10, 20]

    def test_scenario_file(self, tmp_path):
        sc = tmp_path / "sc.json"
        sc.write_text(json.dumps({"n": 60, "n_test": 60, "K": 2, "q": 6, "lambda": [-0.3, 0.3],
                                  "n_sim": 2, "m_max": 30, "folds": 3, "variants": ["gb-gb", "fgls"]}))
        out = tmp_path / "o"
        assert run("simulate", "--scenario", sc, "--out", out) == 0
        rows = list(csv.DictReader(open(out / "metrics.csv")))
        assert [(r["lambda"], r["variant"]) for r in rows] == [
            ("-0.3", "gb-gb"), ("-0.3", "fgls"), ("0.3", "gb-gb"), ("0.3", "fgls")]
        m = json.loads((out / "manifest.json").read_text())
        assert m["inputs"][str(sc)] == digest(sc)

    def test_deterministic(self, tmp_path):
        argv = ("simulate", "--nsim", 2, "--q", 6, "--mmax", 30, "--folds", 3, "--seed", 5)
        run(*argv, "--out", tmp_path / "a")
        run(*argv, "--out", tmp_path / "b", "--workers", 2)
        for name in ("metrics.csv", "replications.csv", "coefficients.csv", "summary.json"):
            assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)

    @pytest.mark.parametrize(
        "extra",
        [("--q", 5), ("--lambda", 1.2), ("--variants", "lasso"), ("--k", "x")],
    )
    def test_invalid_config(self, tmp_path, extra):
        assert run("simulate", "--nsim", 1, *extra, "--out", tmp_path / "o") == 2

    def test_bad_scenario_file(self, tmp_path):
        (tmp_path / "s.json").write_text("[1, 2]")
        assert run("simulate", "--scenario", tmp_path / "s.json", "--out", tmp_path / "o") == 2
        (tmp_path / "t.json").write_text(json.dumps({"rho": 0.2}))
        assert run("simulate", "--scenario", tmp_path / "t.json", "--out", tmp_path / "o") == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spatboost.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("spatboost ")
