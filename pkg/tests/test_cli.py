"""Command line surface: subcommands, artifacts, exit codes."""

import json
from importlib import resources
from types import SimpleNamespace

import numpy as np
import pytest

import spinelab.cli as cli
from spinelab.simulate import ResourceError


def _doc():
    text = resources.files("spinelab.data").joinpath("canon2.json").read_text()
    return json.loads(text)


def _report(out_dir, *parts):
    p = out_dir
    for part in parts:
        p = p / part
    return json.loads((p / "report.json").read_text())


TINY_BUDGET = {"m_nodes": 60, "eps": 5e-3, "particle_dt": 5e-3,
               "spine_dt": 2e-2, "w_replicates": 30,
               "w_checkpoints": [0.25, 0.5], "spine_replicates": 200,
               "spine_checkpoints": [2.0, 4.0], "spine_horizon": 4.0,
               "h_replicates": 10, "h_checkpoint": 0.25}


class TestValidate:
    def test_canon2(self, tmp_path, capsys):
        rc = cli.main(["validate", "--scenario", "canon2",
                       "--out", str(tmp_path)])
        assert rc == 0
        assert "valid" in capsys.readouterr().out
        doc = _report(tmp_path)
        assert doc["command"] == "validate" and doc["valid"]
        assert doc["symmetry_residual"] < 1e-12
        assert len(doc["fingerprint"]) == 64
        assert all(row["llogl_finite"] for row in doc["kernels"])

    def test_canonh_reports_divergent_kernel(self, tmp_path):
        rc = cli.main(["validate", "--scenario", "canonh",
                       "--out", str(tmp_path)])
        assert rc == 0
        flags = [row["llogl_finite"] for row in _report(tmp_path)["kernels"]]
        assert False in flags


class TestScenarioErrors:
    def test_missing_file_exits_2(self, tmp_path, capsys):
        rc = cli.main(["validate", "--scenario", str(tmp_path / "nope.json"),
                       "--out", str(tmp_path)])
        assert rc == 2
        assert "scenario error:" in capsys.readouterr().err

    def test_malformed_field_named_on_stderr(self, tmp_path, capsys):
        doc = _doc()
        del doc["coefficients"]["n"]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        rc = cli.main(["validate", "--scenario", str(bad),
                       "--out", str(tmp_path)])
        assert rc == 2
        err = capsys.readouterr().err
        assert "scenario error:" in err and "'n'" in err


class TestSpectral:
    def test_report_contents(self, tmp_path, capsys):
        rc = cli.main(["spectral", "--scenario", "canon2", "--nodes", "60",
                       "--out", str(tmp_path)])
        assert rc == 0
        assert "lam1=" in capsys.readouterr().out
        doc = _report(tmp_path)
        assert abs(doc["lam1"] - 1.0) < 1e-2
        assert doc["assumption1"]["satisfied"]
        assert doc["iu"]["bound_ok"] and doc["iu"]["delta_monotone"]
        assert len(doc["phi"]["nodes"]) == 60
        assert doc["budget"]["m_nodes"] == 60


class TestCriterion:
    def test_finite(self, tmp_path, capsys):
        rc = cli.main(["criterion", "--scenario", "canon2", "--nodes", "60",
                       "--out", str(tmp_path)])
        assert rc == 0
        assert "finite" in capsys.readouterr().out
        doc = _report(tmp_path)
        assert doc["llogl_finite"] and doc["total"] == 0.0

    def test_divergent(self, tmp_path, capsys):
        rc = cli.main(["criterion", "--scenario", "canonh", "--nodes", "60",
                       "--out", str(tmp_path)])
        assert rc == 0
        assert "divergent" in capsys.readouterr().out
        doc = _report(tmp_path)
        assert not doc["llogl_finite"]
        assert doc["total"] == "inf"
        assert doc["certificate"]["strictly_increasing"]


class TestEvolve:
    def test_identity_artifacts(self, tmp_path, capsys):
        rc = cli.main(["evolve", "--scenario", "canon2", "--nodes", "60",
                       "--dt", "2e-3", "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "consistent=pre" in out
        doc = _report(tmp_path)
        assert doc["identity"]["consistent_convention"] == "pre"
        assert doc["pre"]["residual"] < 1e-2
        assert doc["spine_route"]["residual"] < 1e-2
        lines = (tmp_path / "fields.csv").read_text().splitlines()
        assert lines[0] == "time,node,type,value"
        assert len(lines) > 60


class TestSimulate:
    def test_phi_start_batch(self, tmp_path, capsys):
        rc = cli.main(["simulate", "--scenario", "canon2", "--nodes", "60",
                       "--eps", "5e-3", "--dt", "5e-3", "--replicates", "40",
                       "--horizon", "0.5", "--seed", "3",
                       "--out", str(tmp_path)])
        assert rc == 0
        assert "verdict" in capsys.readouterr().out
        doc = _report(tmp_path)
        assert doc["times"] == [0.0, 0.5]
        assert doc["degeneracy"]["verdict"] == "inconclusive"
        mean, se = doc["mean_W"][-1], doc["se_W"][-1]
        assert abs(mean - doc["phi_mass"]) < 5 * se
        lines = (tmp_path / "trajectories.csv").read_text().splitlines()
        assert lines[0] == "replicate,time,W,M,particle_count"
        assert len(lines) == 1 + 40 * 2

    def test_decomposition_records_immigration(self, tmp_path):
        rc = cli.main(["simulate", "--scenario", "canon2", "--nodes", "60",
                       "--eps", "5e-3", "--dt", "5e-3", "--replicates", "20",
                       "--horizon", "0.4", "--decomposition",
                       "--out", str(tmp_path)])
        assert rc == 0
        doc = _report(tmp_path)
        assert doc["decomposition"]
        assert doc["meta"]["construction"] == "spine-immigration"
        assert doc["mean_M"][0] == 0.0 and doc["mean_M"][-1] > 0.0

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        args = ["simulate", "--scenario", "canon2", "--nodes", "60",
                "--eps", "5e-3", "--dt", "5e-3", "--replicates", "24",
                "--horizon", "0.3", "--seed", "11"]
        cli.main(args + ["--workers", "1", "--out", str(tmp_path / "w1")])
        cli.main(args + ["--workers", "3", "--out", str(tmp_path / "w3")])
        assert ((tmp_path / "w1" / "trajectories.csv").read_bytes()
                == (tmp_path / "w3" / "trajectories.csv").read_bytes())

    def test_workers_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPINELAB_WORKERS", "2")
        rc = cli.main(["simulate", "--scenario", "canon2", "--nodes", "60",
                       "--eps", "5e-3", "--dt", "5e-3", "--replicates", "8",
                       "--horizon", "0.2", "--out", str(tmp_path)])
        assert rc == 0


class TestSpine:
    def test_series_artifacts(self, tmp_path, capsys):
        rc = cli.main(["spine", "--scenario", "canon2", "--nodes", "60",
                       "--dt", "0.05", "--replicates", "300",
                       "--horizon", "4", "--out", str(tmp_path)])
        assert rc == 0
        assert "mean S at T=4" in capsys.readouterr().out
        doc = _report(tmp_path)
        # budget checkpoints beyond the horizon drop; the horizon is kept
        assert doc["checkpoints"] == [4.0]
        assert doc["n_rep"] == 300
        mean, se = doc["mean_S"][-1], doc["se_S"][-1]
        assert abs(mean - doc["stationary_mean"]) < 5 * se + 0.05
        lines = (tmp_path / "series.csv").read_text().splitlines()
        assert lines[0] == "replicate,T_checkpoint,S_T,max_term"
        assert len(lines) == 1 + 300


class TestNumericalFailure:
    def test_exit_3_with_partial_artifacts(self, tmp_path, capsys, monkeypatch):
        partial = SimpleNamespace(
            times=np.array([0.0, 0.5]),
            W=np.array([[1.0], [np.nan]]),
            M=None,
            counts=np.array([[5], [0]]))

        def boom(*a, **kw):
            raise ResourceError("particle cap exceeded", partial=partial)

        monkeypatch.setattr(cli, "sim_particles", boom)
        rc = cli.main(["simulate", "--scenario", "canon2", "--nodes", "60",
                       "--replicates", "4", "--out", str(tmp_path)])
        assert rc == 3
        assert "numerical failure" in capsys.readouterr().err
        doc = _report(tmp_path)
        assert doc["error_type"] == "ResourceError"
        assert doc["partial_trajectories"] == "trajectories.csv"
        lines = (tmp_path / "trajectories.csv").read_text().splitlines()
        assert lines[1].startswith("0,0.0,1.0,")
        assert "nan" in lines[2]


class TestVerifyAll:
    def _tiny_scenario(self, tmp_path):
        doc = _doc()
        doc["budget"] = dict(TINY_BUDGET)
        p = tmp_path / "tiny2.json"
        p.write_text(json.dumps(doc))
        return p

    def test_underpowered_run_exits_1(self, tmp_path, capsys):
        sc = self._tiny_scenario(tmp_path)
        rc = cli.main(["verify-all", "--scenario", str(sc),
                       "--out", str(tmp_path / "out")])
        assert rc == 1
        out = capsys.readouterr().out
        assert "consistent=false" in out and "insufficient samples" in out
        doc = _report(tmp_path, "out", "tiny2")
        assert doc["command"] == "verify-all"
        assert doc["consistent"] is False
        traj = (tmp_path / "out" / "tiny2" / "trajectories.csv").read_text()
        assert traj.startswith("replicate,time,W,M,particle_count")
        series = (tmp_path / "out" / "tiny2" / "series.csv").read_text()
        assert series.startswith("replicate,T_checkpoint,S_T,max_term")

    def test_stage_failure_exits_3(self, tmp_path, capsys):
        doc = _doc()
        doc["budget"] = dict(TINY_BUDGET, m_nodes=2100)
        p = tmp_path / "huge.json"
        p.write_text(json.dumps(doc))
        rc = cli.main(["verify-all", "--scenario", str(p),
                       "--out", str(tmp_path / "out")])
        assert rc == 3
        assert "stage spectral failed" in capsys.readouterr().err
        doc = _report(tmp_path, "out", "huge")
        assert "spectral" in doc["errors"]

    def test_malformed_scenario_aborts_with_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        rc = cli.main(["verify-all", "--scenario", str(bad),
                       "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "scenario error:" in capsys.readouterr().err
