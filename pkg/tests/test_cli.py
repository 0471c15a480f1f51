"""Command-surface tests: schemas, exit codes, round trips, figures."""

import json

import numpy as np
import pandas as pd
import pytest

from netar.cli import main
from netar.model import banded_weights, save_weights
from netar.panel import ingest_panel
from netar.simulation import GaussianIid, SimConfig, simulate
from netar.model import NarSpec


N = 6


@pytest.fixture
def workdir(tmp_path):
    w = banded_weights(N, 2)
    save_weights(w, tmp_path / "w.csv")
    spec = {
        "n": N, "q1": 1, "q2": 1, "p": 1,
        "a": [[0.3] * N], "b": [[0.2] * N],
        "gamma": [[0.5]] * N,
        "w_path": "w.csv",
    }
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    return tmp_path


def run(capsys, *args):
    code = main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def echo_line(err):
    lines = [ln for ln in err.strip().splitlines() if ln.startswith("{")]
    assert lines, f"no config echo on stderr: {err!r}"
    return json.loads(lines[-1])


class TestStability:
    def test_known_radius_spec(self, tmp_path, capsys):
        save_weights(np.array([[0.0, 1.0], [1.0, 0.0]]), tmp_path / "w2.csv")
        spec = {
            "n": 2, "q1": 2, "q2": 2, "p": 0,
            "a": [[1.5, 1.5], [-0.8, -0.8]],
            "b": [[0.1, 0.1], [0.1, 0.1]],
            "gamma": [], "w_path": "w2.csv",
        }
        path = tmp_path / "osc.json"
        path.write_text(json.dumps(spec))
        code, out, err = run(capsys, "stability", "--spec", path)
        assert code == 0
        payload = json.loads(out)
        assert abs(payload["radius"] - 0.949) < 5e-4
        assert payload["stable"] is True
        cfg = echo_line(err)
        assert cfg["command"] == "stability"

    def test_csv_format(self, workdir, capsys):
        code, out, err = run(capsys, "--format", "csv", "stability",
                             "--spec", workdir / "spec.json")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "radius,stable,sufficient_condition"
        assert len(lines) == 2


class TestSimulate:
    def test_matches_library_simulation(self, workdir, capsys):
        out_csv = workdir / "panel.csv"
        code, _, _ = run(capsys, "--seed", 11, "--out", out_csv,
                         "simulate", "--spec", workdir / "spec.json",
                         "--t-len", 50)
        assert code == 0
        ds = ingest_panel(out_csv, covariate_cols=("y1",))
        spec = NarSpec(a=[[0.3] * N], b=[[0.2] * N],
                       gamma=np.full((N, 1), 0.5), w=banded_weights(N, 2))
        sim = simulate(spec, GaussianIid(N), SimConfig(t_len=50, seed=11))
        np.testing.assert_array_equal(ds.x, sim.x)
        np.testing.assert_array_equal(ds.y[:, :, 0], sim.y[:, :, 0])

    def test_json_format(self, workdir, capsys):
        code, out, _ = run(capsys, "--seed", 4, "--format", "json",
                           "simulate", "--spec", workdir / "spec.json",
                           "--t-len", 10)
        assert code == 0
        payload = json.loads(out)
        assert payload["nodes"] == [f"n{i}" for i in range(N)]
        assert np.asarray(payload["x"]).shape == (10, N)
        assert np.asarray(payload["y"]).shape == (10, N, 1)

    def test_unstable_spec_rejected(self, tmp_path, capsys):
        save_weights(banded_weights(4, 1), tmp_path / "w.csv")
        spec = {"n": 4, "q1": 1, "q2": 1, "p": 0,
                "a": [[1.2] * 4], "b": [[0.3] * 4],
                "gamma": [], "w_path": "w.csv"}
        (tmp_path / "bad.json").write_text(json.dumps(spec))
        code, _, err = run(capsys, "simulate", "--spec",
                           tmp_path / "bad.json", "--t-len", 10)
        assert code == 2
        assert "unstable" in err


@pytest.fixture
def panel(workdir, capsys):
    out_csv = workdir / "panel.csv"
    code = main(["--seed", "7", "--out", str(out_csv), "simulate",
                 "--spec", str(workdir / "spec.json"), "--t-len", "80"])
    capsys.readouterr()
    assert code == 0
    return out_csv


def data_args(workdir, panel):
    return ["--data", str(panel), "--w", str(workdir / "w.csv"),
            "--covariate-cols", "y1"]


class TestFit:
    def test_json_schema(self, workdir, panel, capsys):
        code, out, err = run(capsys, "fit", *data_args(workdir, panel),
                             "--q1", 1, "--q2", 1, "--estimator", "egls")
        assert code == 0
        payload = json.loads(out)
        assert payload["estimator"] == "egls_sar"
        assert payload["sigma_kind"] == "sar"
        assert set(payload["diagnostics"]) == {"radius",
                                               "sufficient_condition"}
        assert "rho_hat" in payload
        recs = payload["coefficients"]
        assert len(recs) == 3 * N
        kinds = [(r["kind"], r["lag"]) for r in recs]
        assert kinds.count(("a", 1)) == N
        assert kinds.count(("b", 1)) == N
        assert kinds.count(("gamma", 1)) == N
        first = recs[0]
        assert set(first) == {"node", "lag", "kind", "estimate", "se",
                              "ci_lo", "ci_hi"}
        assert first["ci_lo"] < first["estimate"] < first["ci_hi"]

    def test_padded_lags_omitted(self, workdir, panel, capsys):
        code, out, _ = run(capsys, "fit", *data_args(workdir, panel),
                           "--q1", 2, "--q2", 1)
        assert code == 0
        recs = json.loads(out)["coefficients"]
        assert len(recs) == 4 * N
        assert not any(r["kind"] == "b" and r["lag"] == 2 for r in recs)

    def test_csv_format_and_figure(self, workdir, panel, capsys):
        fig = workdir / "fit.png"
        code, out, _ = run(capsys, "--format", "csv", "fit",
                           *data_args(workdir, panel), "--q1", 1, "--q2", 1,
                           "--figure", fig)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "node,lag,kind,estimate,se,ci_lo,ci_hi"
        assert len(lines) == 1 + 3 * N
        assert fig.exists() and fig.stat().st_size > 0

    def test_factor_covariance_reports_k(self, workdir, panel, capsys):
        code, out, _ = run(capsys, "fit", *data_args(workdir, panel),
                           "--q1", 1, "--q2", 1, "--estimator", "egls",
                           "--cov", "factor", "--kmax", 2)
        assert code == 0
        payload = json.loads(out)
        assert payload["sigma_kind"] == "factor"
        assert "k_hat" in payload


class TestForecast:
    def test_default_next_step(self, workdir, panel, capsys):
        code, out, _ = run(capsys, "forecast", *data_args(workdir, panel),
                           "--q1", 1, "--q2", 1)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "node,forecast"
        assert len(lines) == 1 + N

    def test_rolling_rows_and_pmse(self, workdir, panel, capsys):
        fig = workdir / "fc.png"
        code, out, err = run(capsys, "forecast", *data_args(workdir, panel),
                             "--q1", 1, "--q2", 1, "--test-len", 6,
                             "--figure", fig)
        assert code == 0
        frame = pd.read_csv(pd.io.common.StringIO(out))
        assert list(frame.columns) == ["t", "node", "forecast", "actual",
                                       "error"]
        assert len(frame) == 6 * N
        np.testing.assert_allclose(frame["error"],
                                   frame["actual"] - frame["forecast"],
                                   atol=1e-12)
        cfg = echo_line(err)
        assert cfg["pmse"] == pytest.approx(np.mean(frame["error"] ** 2))
        assert fig.exists() and fig.stat().st_size > 0

    def test_figure_requires_test_len(self, workdir, panel, capsys):
        code, _, _ = run(capsys, "forecast", *data_args(workdir, panel),
                         "--q1", 1, "--q2", 1, "--figure",
                         workdir / "no.png")
        assert code == 1


class TestSelect:
    def test_recovers_order_one(self, workdir, panel, capsys):
        code, out, _ = run(capsys, "select", *data_args(workdir, panel),
                           "--qmax", 3)
        assert code == 0
        payload = json.loads(out)
        assert payload["q_hat"] == 1
        assert len(payload["bic"]) == 3

    def test_zero_panel_is_numerical_failure(self, tmp_path, capsys):
        rows = [(t, f"n{i}", 0.0) for t in range(30) for i in range(4)]
        pd.DataFrame(rows, columns=["time", "node", "value"]).to_csv(
            tmp_path / "zeros.csv", index=False)
        save_weights(banded_weights(4, 1), tmp_path / "w4.csv")
        code, _, err = run(capsys, "select", "--data", tmp_path / "zeros.csv",
                           "--w", tmp_path / "w4.csv", "--qmax", 2)
        assert code == 3
        assert "numerical error" in err


class TestBootstrap:
    def test_deterministic_under_seed(self, workdir, panel, capsys):
        args = ["bootstrap", *data_args(workdir, panel), "--q1", 1,
                "--q2", 1, "--b-reps", 25]
        code1, out1, _ = run(capsys, "--seed", 3, *args)
        code2, out2, _ = run(capsys, "--seed", 3, *args)
        code3, out3, _ = run(capsys, "--seed", 4, *args)
        assert code1 == code2 == code3 == 0
        assert out1 == out2
        assert out1 != out3
        lines = out1.strip().splitlines()
        assert lines[0] == "node,lag,kind,estimate,ci_lo,ci_hi"
        assert len(lines) == 1 + 3 * N

    def test_json_reports_failures(self, workdir, panel, capsys):
        code, out, _ = run(capsys, "--format", "json", "bootstrap",
                           *data_args(workdir, panel), "--q1", 1, "--q2", 1,
                           "--b-reps", 25)
        assert code == 0
        payload = json.loads(out)
        assert payload["n_fail"] == 0
        assert payload["b_reps"] == 25

    def test_egls_defaults_phi_to_w(self, workdir, panel, capsys):
        code, out, _ = run(capsys, "--seed", 3, "--format", "json",
                           "bootstrap", *data_args(workdir, panel),
                           "--q1", 1, "--q2", 1, "--estimator", "egls",
                           "--b-reps", 25)
        assert code == 0
        payload = json.loads(out)
        assert payload["estimator"] == "egls"
        assert all(r["ci_lo"] < r["ci_hi"] for r in payload["coefficients"])


def scenario_dict():
    return {
        "schema_version": 1, "scenario_id": "demo", "n": N,
        "a": [[0.2, 0.4]], "b": [[0.3]], "gamma": [0.5],
        "t_grid": [60, 90], "n_reps": 3, "estimators": ["ols"],
        "w": {"kind": "banded", "width": 2},
        "error": {"kind": "iid", "sigma2": 1.0}, "seed": 5,
    }


class TestReplicate:
    def test_csv_and_figures(self, tmp_path, capsys):
        (tmp_path / "scen.json").write_text(json.dumps(scenario_dict()))
        out_csv = tmp_path / "metrics.csv"
        code, _, err = run(capsys, "--out", out_csv, "replicate",
                           "--scenario", tmp_path / "scen.json")
        assert code == 0
        frame = pd.read_csv(out_csv)
        assert list(frame.columns) == ["scenario_id", "estimator", "group",
                                       "T", "true", "mean_est", "rmse",
                                       "ci_len", "cp", "n_ok"]
        fig = tmp_path / "metrics_ols.png"
        assert fig.exists() and fig.stat().st_size > 0
        cfg = echo_line(err)
        assert cfg["figures"] == [str(fig)]
        assert cfg["seed"] == 5

    def test_no_figures_flag(self, tmp_path, capsys):
        (tmp_path / "scen.json").write_text(json.dumps(scenario_dict()))
        out_csv = tmp_path / "metrics.csv"
        code, _, _ = run(capsys, "--out", out_csv, "replicate",
                         "--scenario", tmp_path / "scen.json",
                         "--no-figures")
        assert code == 0
        assert not list(tmp_path.glob("*.png"))

    def test_stdout_skips_figures_with_note(self, tmp_path, capsys):
        (tmp_path / "scen.json").write_text(json.dumps(scenario_dict()))
        code, out, err = run(capsys, "replicate", "--scenario",
                             tmp_path / "scen.json")
        assert code == 0
        assert out.startswith("scenario_id,")
        assert "figures skipped" in err

    def test_seed_override_changes_results(self, tmp_path, capsys):
        (tmp_path / "scen.json").write_text(json.dumps(scenario_dict()))
        base = tmp_path / "a.csv"
        over = tmp_path / "b.csv"
        run(capsys, "--out", base, "replicate", "--scenario",
            tmp_path / "scen.json", "--no-figures")
        code, _, err = run(capsys, "--seed", 99, "--out", over, "replicate",
                           "--scenario", tmp_path / "scen.json",
                           "--no-figures")
        assert code == 0
        assert echo_line(err)["seed"] == 99
        assert base.read_text() != over.read_text()

    def test_misspec_kind(self, tmp_path, capsys):
        cfg = {"kind": "misspec", "n": 6, "a_diag": [0.5] * 6,
               "b_diag": [0.8, -0.8] * 3, "t_grid": [60, 90], "n_reps": 3,
               "seed": 2}
        (tmp_path / "mis.json").write_text(json.dumps(cfg))
        out_csv = tmp_path / "curve.csv"
        code, _, _ = run(capsys, "--out", out_csv, "replicate",
                         "--scenario", tmp_path / "mis.json")
        assert code == 0
        frame = pd.read_csv(out_csv)
        assert list(frame.columns) == ["rate", "T", "variant", "est_error",
                                       "cp", "n_ok"]
        assert (tmp_path / "curve_curves.png").exists()

    def test_unknown_kind_rejected(self, tmp_path, capsys):
        (tmp_path / "odd.json").write_text(json.dumps({"kind": "other"}))
        code, _, err = run(capsys, "replicate", "--scenario",
                           tmp_path / "odd.json")
        assert code == 2
        assert "unknown scenario kind" in err


class TestGeoWeights:
    COORDS = [("s1", 39.9, 116.4), ("s2", 31.2, 121.5), ("s3", 23.1, 113.3)]

    def write(self, path, rows):
        pd.DataFrame(rows, columns=["node", "lat", "lon"]).to_csv(
            path, index=False)

    def test_rows_sum_to_one(self, tmp_path, capsys):
        self.write(tmp_path / "c.csv", self.COORDS)
        code, out, _ = run(capsys, "geo-weights", "--coords",
                           tmp_path / "c.csv", "--cutoff-km", 3000)
        assert code == 0
        payload = json.loads(out)
        w = np.asarray(payload["w"])
        phi = np.asarray(payload["phi"])
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-12)
        assert payload["node_ids"] == ["s1", "s2", "s3"]

    def test_node_order_invariance(self, tmp_path, capsys):
        self.write(tmp_path / "c1.csv", self.COORDS)
        perm = [2, 0, 1]
        self.write(tmp_path / "c2.csv", [self.COORDS[i] for i in perm])
        _, out1, _ = run(capsys, "geo-weights", "--coords",
                         tmp_path / "c1.csv", "--cutoff-km", 3000)
        _, out2, _ = run(capsys, "geo-weights", "--coords",
                         tmp_path / "c2.csv", "--cutoff-km", 3000)
        w1 = np.asarray(json.loads(out1)["w"])
        w2 = np.asarray(json.loads(out2)["w"])
        np.testing.assert_allclose(w2, w1[np.ix_(perm, perm)], atol=1e-15)

    def test_csv_format_writes_matrices(self, tmp_path, capsys):
        self.write(tmp_path / "c.csv", self.COORDS)
        w_out = tmp_path / "w.csv"
        phi_out = tmp_path / "phi.csv"
        code, _, _ = run(capsys, "--format", "csv", "--out", w_out,
                         "geo-weights", "--coords", tmp_path / "c.csv",
                         "--cutoff-km", 3000, "--phi-out", phi_out)
        assert code == 0
        w = np.loadtxt(w_out, delimiter=",")
        phi = np.loadtxt(phi_out, delimiter=",")
        assert w.shape == phi.shape == (3, 3)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_isolated_node_is_data_error(self, tmp_path, capsys):
        self.write(tmp_path / "c.csv", self.COORDS)
        code, _, err = run(capsys, "geo-weights", "--coords",
                           tmp_path / "c.csv", "--cutoff-km", 100)
        assert code == 2


class TestExitCodes:
    def test_usage_errors(self, workdir, capsys):
        assert run(capsys, "stability")[0] == 1
        assert run(capsys, "nosuchcommand")[0] == 1
        assert run(capsys, "fit", "--data", "x.csv", "--w", "w.csv",
                   "--q1", 1, "--q2", 1, "--estimator", "bogus")[0] == 1

    def test_gls_without_sigma_is_usage_error(self, workdir, panel, capsys):
        code, _, _ = run(capsys, "fit", *data_args(workdir, panel),
                         "--q1", 1, "--q2", 1, "--estimator", "gls")
        assert code == 1

    def test_missing_data_file(self, workdir, capsys):
        code, _, err = run(capsys, "fit", "--data",
                           workdir / "missing.csv", "--w",
                           workdir / "w.csv", "--q1", 1, "--q2", 1)
        assert code == 2
        assert "data error" in err

    def test_malformed_spec_json(self, workdir, capsys):
        bad = workdir / "bad.json"
        bad.write_text("{not json")
        code, _, _ = run(capsys, "stability", "--spec", bad)
        assert code == 2

    def test_spec_missing_fields(self, workdir, capsys):
        part = workdir / "part.json"
        part.write_text(json.dumps({"n": 4, "q1": 1}))
        code, _, err = run(capsys, "stability", "--spec", part)
        assert code == 2
        assert "missing fields" in err
