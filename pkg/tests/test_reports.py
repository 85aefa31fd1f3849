"""JSON/CSV artifact writers: strict values, stable bytes."""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from spinelab.reports import (VERSION, sanitize, write_field_csv,
                              write_report, write_series_csv,
                              write_trajectories_csv)


class TestSanitize:
    def test_numpy_scalars_become_native(self):
        out = sanitize({"f": np.float64(1.5), "i": np.int32(3),
                        "b": np.bool_(True)})
        assert out == {"f": 1.5, "i": 3, "b": True}
        assert type(out["f"]) is float
        assert type(out["i"]) is int
        assert type(out["b"]) is bool

    def test_arrays_become_nested_lists(self):
        out = sanitize(np.arange(6.0).reshape(2, 3))
        assert out == [[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]

    def test_nonfinite_floats_become_strings(self):
        out = sanitize([np.inf, -np.inf, np.nan, 2.0])
        assert out == ["inf", "-inf", "nan", 2.0]

    def test_keys_stringified_tuples_listified(self):
        out = sanitize({1.0: ("a", None)})
        assert out == {"1.0": ["a", None]}


class TestWriteReport:
    def test_layout_and_stamps(self, tmp_path):
        path = tmp_path / "sub" / "report.json"
        write_report(str(path), {"zeta": np.float64(2.0), "alpha": [np.nan]},
                     fingerprint="f" * 64, seed=7, budget={"eps": 1e-3})
        text = path.read_text()
        assert text.endswith("}\n")
        assert '  "alpha"' in text                      # indent 2
        assert text.index('"alpha"') < text.index('"zeta"')
        doc = json.loads(text)
        assert doc["version"] == VERSION
        assert doc["fingerprint"] == "f" * 64
        assert doc["seed"] == 7
        assert doc["budget"] == {"eps": 1e-3}
        assert doc["alpha"] == ["nan"]

    def test_explicit_fields_not_overwritten(self, tmp_path):
        path = tmp_path / "report.json"
        write_report(str(path), {"seed": 1, "version": "x"}, seed=99)
        doc = json.loads(path.read_text())
        assert doc["seed"] == 1 and doc["version"] == "x"

    def test_strict_json(self, tmp_path):
        path = tmp_path / "report.json"
        write_report(str(path), {"v": np.array([1.0, np.inf])})
        assert "Infinity" not in path.read_text()


def _traj(with_m):
    times = np.array([0.0, 0.5])
    W = np.array([[1.0, 2.0], [0.1, 0.25]])
    M = np.array([[0.0, 0.0], [3.5, 4.5]]) if with_m else None
    counts = np.array([[10, 20], [1, 2]])
    return SimpleNamespace(times=times, W=W, M=M, counts=counts)


class TestTrajectoriesCsv:
    def test_header_and_rows(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trajectories_csv(str(path), _traj(with_m=True))
        lines = path.read_text().splitlines()
        assert lines[0] == "replicate,time,W,M,particle_count"
        assert len(lines) == 1 + 2 * 2
        assert lines[1] == "0,0.0,1.0,0.0,10"
        assert lines[2] == "0,0.5,0.1,3.5,1"
        assert lines[4] == "1,0.5,0.25,4.5,2"

    def test_missing_m_written_as_zero(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trajectories_csv(str(path), _traj(with_m=False))
        rows = [ln.split(",") for ln in path.read_text().splitlines()[1:]]
        assert all(r[3] == "0.0" for r in rows)

    def test_bytes_stable_across_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trajectories_csv(str(a), _traj(with_m=True))
        write_trajectories_csv(str(b), _traj(with_m=True))
        assert a.read_bytes() == b.read_bytes()

    def test_repr_floats_round_trip(self, tmp_path):
        traj = _traj(with_m=True)
        traj.W[0, 0] = 1 / 3
        path = tmp_path / "t.csv"
        write_trajectories_csv(str(path), traj)
        cell = path.read_text().splitlines()[1].split(",")[2]
        assert float(cell) == 1 / 3


class TestSeriesCsv:
    def test_header_and_rows(self, tmp_path):
        series = {"checkpoints": [1.0, 2.0],
                  "S": np.array([[0.5, 0.6], [0.7, np.inf]]),
                  "max_term": np.array([[0.1, 0.2], [0.3, 0.4]])}
        path = tmp_path / "s.csv"
        write_series_csv(str(path), series)
        lines = path.read_text().splitlines()
        assert lines[0] == "replicate,T_checkpoint,S_T,max_term"
        assert lines[1] == "0,1.0,0.5,0.1"
        assert lines[4] == "1,2.0,inf,0.4"


class TestFieldCsv:
    def _etraj(self):
        nodes = np.array([0.25, 0.5, 0.75])
        fields = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
        grid = SimpleNamespace(nodes=nodes, K=2)
        return SimpleNamespace(times=np.array([0.0, 1.0]), grid=grid,
                               fields=fields)

    def test_all_snapshots_by_default(self, tmp_path):
        path = tmp_path / "f.csv"
        write_field_csv(str(path), self._etraj())
        lines = path.read_text().splitlines()
        assert lines[0] == "time,node,type,value"
        assert len(lines) == 1 + 2 * 2 * 3
        assert lines[1] == "0.0,0.25,0,0.0"
        assert lines[4] == "0.0,0.25,1,1.0"     # second type after first

    def test_times_picks_nearest_snapshot(self, tmp_path):
        path = tmp_path / "f.csv"
        write_field_csv(str(path), self._etraj(), times=[0.9, 1.0])
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 2 * 3           # duplicates collapse
        assert all(ln.startswith("1.0,") for ln in lines[1:])
