import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from covaroc import datagen, modelfile
from covaroc.basis import BasisConfig, BasisSet, place_grid
from covaroc.cli import main, parse_grid, read_oracle_csv
from covaroc.dataset import ingest_pairs_csv
from covaroc.errors import ConfigurationError
from covaroc.inference import Posterior
from covaroc.metrics import threshold_at, tpr_at_fpr
from covaroc.mixture import MixtureParams, PriorSpec


def run(*argv):
    return main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def symmetric_posterior(seed, n_draws=4, names=("q_s", "g_s")):
    """2-d posterior whose every draw is invariant under swapping the two covariates."""
    basis = place_grid(BasisConfig(grid=(4,)), 2, [(0.0, 1.0), (0.0, 1.0)])
    c = basis.active_centers
    perm = [int(np.flatnonzero(np.all(np.isclose(c, row[::-1]), axis=1))[0]) for row in c]
    perm = perm + [len(c)]  # constant column stays put
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_draws):
        ww, wl = (0.5 * rng.standard_normal((2, len(perm))) for _ in range(2))
        draws.append(MixtureParams(0.5 * (ww + ww[:, perm]), 0.5 * (wl + wl[:, perm]),
                                   rng.uniform(-1.0, -0.3, 2)))
    return Posterior(draws, basis, PriorSpec(), covariate_names=names,
                     covariate_range=np.array([[0.0, 1.0], [0.0, 1.0]]))


@pytest.fixture(scope="module")
def sym_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("sym") / "model.json"
    m = symmetric_posterior(1)
    nm_draws = [MixtureParams(d.w_weights, d.w_locations + np.r_[np.zeros(16), 2.0], d.log_sigmas)
                for d in symmetric_posterior(2).draws]
    nm = Posterior(nm_draws, m.basis, PriorSpec(), m.covariate_names,
                   covariate_range=m.covariate_range)
    modelfile.write_model(path, m, nm)
    return path


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    """Small linear-1d simulation and a short SVI fit."""
    root = tmp_path_factory.mktemp("fitted")
    assert run("simulate", "--preset", "linear-1d", "--n", 600, "--seed", 1, "--out", root,
               "--oracle-grid", 5, "--oracle-n", 20_000, "--oracle-fpr", 0.01) == 0
    assert run("fit", "--data", root / "pairs.csv", "--iterations", 400, "--draws", 20,
               "--basis-grid", 5, "--seed", 2, "--out", root) == 0
    return root


def test_simulate_writes_pairs_truth_and_oracle(fitted):
    rows = read_rows(fitted / "pairs.csv")
    assert rows[0] == ["query_id", "gallery_id", "score", "match", "x"]
    assert len(rows) == 601
    truth = json.loads((fitted / "truth.json").read_text())
    assert truth["seed"] == 1 and truth["truth"]["n_match"] == 200
    names, queries, values = read_oracle_csv(fitted / "oracle.csv")
    assert names == ["x"] and len(values) == 5
    assert queries[0] == {"x": 0.0} and queries[-1] == {"x": 1.0}
    assert np.all(np.diff(values) < 0)  # match scores drift toward non-match with x


def test_pairs_table_round_trips_through_ingest(fitted):
    spec = datagen.TruthSpec.from_dict(json.loads((fitted / "truth.json").read_text())["truth"])
    direct = datagen.generate(spec, 1)
    back = ingest_pairs_csv(fitted / "pairs.csv")
    np.testing.assert_allclose(back.scores, direct.scores, rtol=1e-15, atol=0)
    np.testing.assert_allclose(back.covariates, direct.covariates, rtol=1e-15, atol=0)
    np.testing.assert_array_equal(back.match, direct.match)


def test_fit_writes_model_and_report(fitted, capsys):
    model = modelfile.read_model(fitted / "model.json")
    assert model["match"].n_draws == 20 and model["nonmatch"].n_draws == 20
    assert model["config"]["seed"] == 2
    assert "output_dir" not in model["config"] and "dataset" not in model["config"]
    report = json.loads((fitted / "fit_report.json").read_text())
    assert set(report) == {"match", "nonmatch"}
    assert "wall_time" not in json.dumps(report)


def test_single_query_equals_library_call(fitted, tmp_path):
    assert run("metrics", "--model", fitted / "model.json", "--query", "x=0.4", "--fpr", 0.01,
               "--out", tmp_path) == 0
    model = modelfile.read_model(fitted / "model.json")
    lib = tpr_at_fpr(model["match"], model["nonmatch"], {"x": 0.4}, fpr=0.01)
    got = json.loads((tmp_path / "metrics.json").read_text())["rows"][0]
    assert got["point"] == lib.point and got["lo"] == lib.lo and got["hi"] == lib.hi
    rows = read_rows(tmp_path / "metrics.csv")
    assert rows[0] == ["x", "metric", "lo", "hi"]
    assert float(rows[1][1]) == lib.point


def test_metrics_default_grid_and_auc(fitted, tmp_path):
    assert run("metrics", "--model", fitted / "model.json", "--metric", "auc", "--grid", 7,
               "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "metrics.csv")[1:]
    assert len(rows) == 7
    vals = np.array([[float(c) for c in r] for r in rows])
    assert np.all((vals[:, 2] <= vals[:, 1]) & (vals[:, 1] <= vals[:, 3]))
    assert np.all((vals[:, 1] > 0.5) & (vals[:, 1] <= 1.0))


def test_roc_command(fitted, tmp_path):
    assert run("roc", "--model", fitted / "model.json", "--query", "x=0.5", "--points", 9,
               "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "roc.csv")
    assert rows[0] == ["draw", "fpr", "tpr"]
    assert len(rows) == 1 + 20 * 9
    tpr = np.array([float(r[2]) for r in rows[1:]]).reshape(20, 9)
    assert np.all(np.diff(tpr, axis=1) >= 0)
    assert run("roc", "--model", fitted / "model.json", "--out", tmp_path) == 2


def test_threshold_symmetric_under_covariate_swap(sym_model, tmp_path):
    assert run("threshold", "--model", sym_model, "--query", "q_s=0.3,g_s=0.8",
               "--query", "q_s=0.8,g_s=0.3", "--fpr", 0.01, "--out", tmp_path) == 0
    rows = json.loads((tmp_path / "threshold.json").read_text())["rows"]
    assert json.loads((tmp_path / "threshold.json").read_text())["metric"] == "threshold"
    a, b = rows
    for k in ("point", "lo", "hi"):
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-12)
    model = modelfile.read_model(sym_model)
    lib = threshold_at(model["nonmatch"], {"q_s": 0.3, "g_s": 0.8}, fpr=0.01)
    assert a["point"] == lib.point


def test_metrics_dense_grid(sym_model, tmp_path):
    assert run("metrics", "--model", sym_model, "--grid", "250x250", "--out", tmp_path) == 0
    with open(tmp_path / "metrics.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 250 * 250


def test_evaluate_perfect_and_degenerate_oracle(sym_model, tmp_path):
    # identical draws: the model's own surface as oracle gives R2 = 1 for every draw
    post = symmetric_posterior(3, n_draws=1)
    same = Posterior(post.draws * 4, post.basis, post.prior, post.covariate_names,
                     covariate_range=post.covariate_range)
    nm = modelfile.read_model(sym_model)["nonmatch"]
    nm = Posterior(nm.draws[:1] * 4, nm.basis, nm.prior, nm.covariate_names,
                   covariate_range=nm.covariate_range)
    model = tmp_path / "model.json"
    modelfile.write_model(model, same, nm)
    assert run("metrics", "--model", model, "--grid", "6x6", "--fpr", 0.01, "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "metrics.csv")
    with open(tmp_path / "oracle.csv", "w") as fh:
        fh.write("q_s,g_s,metric\n")
        for r in rows[1:]:
            fh.write(f"{r[0]},{r[1]},{r[2]}\n")
    assert run("evaluate", "--model", model, "--oracle", tmp_path / "oracle.csv", "--fpr", 0.01,
               "--out", tmp_path) == 0
    ev = json.loads((tmp_path / "evaluate.json").read_text())
    assert ev["r2"]["point"] == pytest.approx(1.0, abs=1e-12)
    assert ev["r2_of_median_surface"] == pytest.approx(1.0, abs=1e-12)
    assert ev["n_gridpoints"] == 36

    with open(tmp_path / "one.csv", "w") as fh:
        fh.write("q_s,g_s,metric\n0.5,0.5,0.3\n")
    assert run("evaluate", "--model", model, "--oracle", tmp_path / "one.csv",
               "--out", tmp_path) == 1


def test_baseline_command(tmp_path):
    assert run("simulate", "--preset", "age-decline", "--n", 3000, "--no-oracle", "--seed", 3,
               "--out", tmp_path) == 0
    assert run("baseline", "--data", tmp_path / "pairs.csv", "--fpr", 0.01, "--replicates", 20,
               "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "baseline.csv")
    assert rows[0] == ["bin", "metric", "lo", "hi", "n_match", "n_nonmatch"]
    assert [r[0] for r in rows[1:]] == ["young", "middle", "old"]
    assert run("baseline", "--data", tmp_path / "pairs.csv", "--edges", "16,30",
               "--out", tmp_path) == 2  # three labels for one bin


@pytest.mark.parametrize("argv", [
    ["simulate", "--preset", "binormal", "--n", "0"],
    ["simulate", "--preset", "nope"],
    ["simulate"],
    ["frobnicate"],
    ["metrics", "--model", "missing.json"],
    ["fit", "--data", "missing.csv"],
])
def test_usage_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_bad_fpr_and_malformed_csv_exit_2(fitted, tmp_path, capsys):
    assert run("metrics", "--model", fitted / "model.json", "--fpr", 1.5, "--out", tmp_path) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("query_id,gallery_id,score,match\na,b,0.1,1\nc,d,oops,0\n")
    assert run("fit", "--data", bad, "--out", tmp_path) == 2
    assert "line 3" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"preset": "binormal"}, "fitt": {}}))
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2


def _tree(root):
    return {p.name: p.read_bytes() for p in sorted(Path(root).iterdir()) if p.is_file()}


def test_commands_deterministic_across_dirs_and_workers(fitted, tmp_path):
    outs = []
    for k, workers in enumerate((1, 3)):
        d = tmp_path / f"run{k}"
        assert run("simulate", "--preset", "linear-1d", "--n", 300, "--seed", 7, "--out", d,
                   "--oracle-grid", 3, "--oracle-n", 1000) == 0
        assert run("fit", "--data", d / "pairs.csv", "--iterations", 100, "--draws", 8,
                   "--basis-grid", 4, "--seed", 7, "--out", d) == 0
        assert run("metrics", "--model", d / "model.json", "--grid", 5, "--workers", workers,
                   "--out", d) == 0
        outs.append(_tree(d))
    assert outs[0] == outs[1]


def test_hmc_small_toy_within_a_minute(tmp_path):
    assert run("simulate", "--preset", "linear-1d", "--n", 200, "--no-oracle", "--seed", 4,
               "--out", tmp_path) == 0
    start = time.perf_counter()
    assert run("fit", "--data", tmp_path / "pairs.csv", "--method", "hmc", "--seed", 4,
               "--out", tmp_path) == 0
    assert time.perf_counter() - start < 60
    model = modelfile.read_model(tmp_path / "model.json")
    assert model["match"].diagnostics["method"] == "hmc"
    assert model["match"].n_draws == 100


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "covaroc", "simulate", "--preset", "chance",
                           "--n", "50", "--no-oracle", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "covaroc", "bogus"], capture_output=True)
    assert proc.returncode == 2


def test_parse_grid():
    assert parse_grid("250x250", 2) == [250, 250]
    assert parse_grid("7", 3) == [7, 7, 7]
    for bad in ("3x", "2x2x2", "0x4"):
        with pytest.raises(ConfigurationError):
            parse_grid(bad, 2)


def test_empty_basis_helper_is_covariate_free():
    assert BasisSet.empty().n_features == 1
