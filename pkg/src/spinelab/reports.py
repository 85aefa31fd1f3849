"""Persisted run artifacts: report.json and the companion CSV tables.

Everything is plain text by design: JSON for the structured report (sorted
keys, strict floats, numpy stripped out) and flat CSVs for per-replicate
data.  Floats are written with repr, the shortest round-trip form, so a
rerun with the same seed produces byte-identical bodies.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

try:
    from importlib.metadata import version
    VERSION = version("spinelab")
except Exception:  # pragma: no cover - not installed
    VERSION = "0.0.0+local"

__all__ = [
    "VERSION",
    "sanitize",
    "write_report",
    "write_trajectories_csv",
    "write_series_csv",
    "write_field_csv",
]


def sanitize(obj):
    """Recursively convert numpy containers/scalars into JSON-safe values.

    Non-finite floats become the strings "inf"/"-inf"/"nan" (strict JSON
    has no literal for them).
    """
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def write_report(path: str, payload: dict, *, fingerprint=None, seed=None,
                 budget=None) -> None:
    """Write payload as sorted, strict JSON; stamps reproduction metadata."""
    doc = dict(payload)
    doc.setdefault("version", VERSION)
    if fingerprint is not None:
        doc.setdefault("fingerprint", fingerprint)
    if seed is not None:
        doc.setdefault("seed", seed)
    if budget is not None:
        doc.setdefault("budget", budget)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(sanitize(doc), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _fmt(v) -> str:
    return repr(float(v))


def write_trajectories_csv(path: str, traj) -> None:
    """Rows (replicate, time, W, M, particle_count) from a WTrajectory."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    M = traj.M if traj.M is not None else np.zeros_like(traj.W)
    with open(path, "w") as fh:
        fh.write("replicate,time,W,M,particle_count\n")
        for r in range(traj.W.shape[1]):
            for k, t in enumerate(traj.times):
                fh.write(f"{r},{_fmt(t)},{_fmt(traj.W[k, r])},"
                         f"{_fmt(M[k, r])},{int(traj.counts[k, r])}\n")


def write_series_csv(path: str, series: dict) -> None:
    """Rows (replicate, T_checkpoint, S_T, max_term) from spine statistics."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    S, mx = series["S"], series["max_term"]
    cps = series["checkpoints"]
    with open(path, "w") as fh:
        fh.write("replicate,T_checkpoint,S_T,max_term\n")
        for r in range(S.shape[1]):
            for k, T in enumerate(cps):
                fh.write(f"{r},{_fmt(T)},{_fmt(S[k, r])},{_fmt(mx[k, r])}\n")


def write_field_csv(path: str, traj, times=None) -> None:
    """Rows (time, node, type, value) from an EvolutionTrajectory.

    ``times`` selects a subset of snapshots (nearest stored time is used);
    by default every stored snapshot is written.
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    stored = np.asarray(traj.times)
    if times is None:
        idx = np.arange(stored.size)
    else:
        idx = np.unique([int(np.argmin(np.abs(stored - t))) for t in times])
    nodes = traj.grid.nodes
    with open(path, "w") as fh:
        fh.write("time,node,type,value\n")
        for k in idx:
            t = stored[k]
            for i in range(traj.grid.K):
                col = traj.fields[k, :, i]
                for m in range(nodes.size):
                    fh.write(f"{_fmt(t)},{_fmt(nodes[m])},{i},{_fmt(col[m])}\n")
