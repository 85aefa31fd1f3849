"""The L log L integral, its finiteness verdict, and the dichotomy experiment.

The analytic verdict is carried by the kernel family (``llogl_finite``), not
by numerics: a divergent integrand cannot be settled by quadrature at any
resolution.  The finite branch evaluates int_D phi b l dx per type with
l(x,i) built from the size of immigrated mass measured through pi(phi); the
divergent branch emits a certificate of truncated integrals whose growth in
the cutoff demonstrates the divergence.

``dichotomy_experiment`` glues the deterministic verdict to the statistical
behavior of the martingale W_t(phi) and of the discounted immigration series
along the spine, and reports whether the two sides agree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .discretize import Grid, build_grid, build_operators
from .model import ModelSpec
from .scenarios import load_scenario, parse_scenario, scenario_fingerprint
from .spectral import (SpectralData, check_assumption1, check_iu,
                       phi_transform, principal_eigenpair)
from .simulate import (degeneracy_test, run_spine_series,
                       series_mean_stationary, sim_particles)

__all__ = [
    "CriterionReport",
    "llogl_integral",
    "ExperimentReport",
    "dichotomy_experiment",
    "DEFAULT_CUTOFFS",
]

DEFAULT_CUTOFFS = (1e2, 1e4, 1e6)


@dataclass
class CriterionReport:
    """Analytic verdict plus the numbers backing it.

    ``per_type`` rows carry the finite-branch integral when the type's
    kernel has a finite u log u moment, otherwise the truncated integrals
    at the certificate cutoffs.  ``total`` is the summed finite value or
    inf when any contributing type diverges.
    """

    llogl_finite: bool
    total: float
    per_type: list
    cutoffs: tuple = DEFAULT_CUTOFFS
    certificate: dict | None = None
    fingerprint: str | None = None

    def to_dict(self) -> dict:
        return {
            "llogl_finite": self.llogl_finite,
            "total": self.total,
            "per_type": self.per_type,
            "cutoffs": list(self.cutoffs),
            "certificate": self.certificate,
            "fingerprint": self.fingerprint,
        }


def llogl_integral(spec: ModelSpec, grid: Grid, sd: SpectralData,
                   cutoffs=DEFAULT_CUTOFFS, fingerprint=None) -> CriterionReport:
    """int_D phi(x,i) b(x,i) l(x,i) dx per type, or a divergence certificate.

    l(x,i) integrates r log+ r against the law of immigrated mass
    u pi(phi)(x,i), so the integrand needs the principal eigenvector.
    """
    if sd is None:
        raise ValueError("llogl_integral needs the principal eigenpair; "
                         "run principal_eigenpair first")
    x = grid.nodes
    P = spec.p(x)
    kap = np.einsum("mij,mj->mi", P, sd.phi)
    bv = np.stack([spec.b(x, i) for i in range(grid.K)], axis=1)

    per_type = []
    total = 0.0
    any_divergent = False
    for i in range(grid.K):
        finite = bool(spec.kernels[i].llogl_finite)
        row: dict = {"type": i, "kernel_family": spec.kernels[i].family,
                     "llogl_finite": finite}
        if finite:
            integrand = sd.phi[:, i] * bv[:, i] * spec.l_field(x, i, kap[:, i])
            row["integral"] = float(grid.h * integrand.sum())
            total += row["integral"]
        else:
            any_divergent = True
            row["integral"] = None
            row["truncated"] = [
                float(grid.h * np.sum(
                    sd.phi[:, i] * bv[:, i]
                    * spec.l_field_truncated(x, i, kap[:, i], U)))
                for U in cutoffs]
        per_type.append(row)

    certificate = None
    if any_divergent:
        total = float("inf")
        totals = []
        for k in range(len(cutoffs)):
            s = 0.0
            for row in per_type:
                s += row["truncated"][k] if row["integral"] is None else row["integral"]
            totals.append(s)
        certificate = {
            "cutoffs": [float(U) for U in cutoffs],
            "totals": totals,
            "strictly_increasing": bool(np.all(np.diff(totals) > 0)),
        }
    return CriterionReport(llogl_finite=not any_divergent, total=total,
                           per_type=per_type, cutoffs=tuple(cutoffs),
                           certificate=certificate, fingerprint=fingerprint)


@dataclass
class ExperimentReport:
    """Everything a dichotomy run produced, stage by stage.

    Stages that failed carry their error string in ``errors`` and leave
    their slot None; the consistency flag is only true when the analytic
    verdict and both statistical verdicts line up.
    """

    scenario: str
    fingerprint: str
    seed: int
    budget: dict
    spectral: dict | None = None
    iu: dict | None = None
    criterion: dict | None = None
    series: dict | None = None
    w_stats: dict | None = None
    degeneracy: dict | None = None
    h_table: list | None = None
    consistent: bool = False
    consistency_reason: str = ""
    errors: dict = field(default_factory=dict)
    elapsed: dict = field(default_factory=dict)
    # raw per-replicate objects for CSV export; not part of to_dict()
    attachments: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "budget": self.budget,
            "spectral": self.spectral,
            "iu": self.iu,
            "criterion": self.criterion,
            "series": self.series,
            "w_stats": self.w_stats,
            "degeneracy": self.degeneracy,
            "h_table": self.h_table,
            "consistent": self.consistent,
            "consistency_reason": self.consistency_reason,
            "errors": self.errors,
            "elapsed": self.elapsed,
        }


def _series_summary(series: dict) -> dict:
    """Strip the per-replicate arrays down to reportable statistics."""
    return {
        "checkpoints": series["checkpoints"].tolist(),
        "mean_S": series["mean_S"].tolist(),
        "se_S": series["se_S"].tolist(),
        "median_S": series["median_S"].tolist(),
        "exceedance": {str(L): v.tolist() for L, v in series["exceedance"].items()},
        "mean_count_big": series["count_big"].mean(axis=1).tolist(),
        "n_rep": series["n_rep"],
        "n_jumps": series["n_jumps"],
    }


def _consistency(llogl_finite, degeneracy, series) -> tuple[bool, str]:
    """Do the analytic and statistical verdicts tell the same story?"""
    if llogl_finite is None or degeneracy is None or series is None:
        return False, "stage failures prevented a verdict"
    verdict = degeneracy["verdict"]
    if verdict == "inconclusive":
        return False, degeneracy.get("reason", "inconclusive")
    exceed = series["exceedance"]
    l_top = max(exceed)
    top = np.asarray(exceed[l_top], dtype=float)
    if llogl_finite:
        if verdict != "consistent-with-L1-limit":
            return False, f"finite criterion but W verdict {verdict!r}"
        if top[-1] > 0.01:
            return False, (f"finite criterion but series terms exceed "
                           f"{l_top:g} in {top[-1]:.1%} of replicates")
        return True, "finite integral, W consistent with its L1 limit, series bounded"
    if verdict != "consistent-with-degeneracy":
        return False, f"divergent criterion but W verdict {verdict!r}"
    growing = all(np.all(np.diff(np.asarray(v, dtype=float)) >= -1e-12)
                  for v in exceed.values())
    if not (growing and top[-1] > top[0]):
        return False, "divergent criterion but series maxima are not spreading"
    return True, "divergent integral, W consistent with degeneracy, series maxima growing"


def _point_starts(spec: ModelSpec, grid: Grid):
    """Three interior starting points with alternating types."""
    lo, hi = spec.domain.lo, spec.domain.hi
    length = hi - lo
    xs = [lo + 0.25 * length, lo + 0.5 * length, lo + 0.75 * length]
    return [(xs[0], 0), (xs[1], 1 % spec.K), (xs[2], 0)]


def dichotomy_experiment(scenario, budget: dict | None = None, seed: int = 0,
                         workers: int = 1) -> ExperimentReport:
    """Full pipeline tying the analytic criterion to the simulated verdicts.

    ``scenario`` is a builtin name, a JSON path, or an already-parsed
    document dict; ``budget`` entries override the scenario's own budget
    block.  Stage errors are recorded and downstream stages are skipped,
    but a report is always returned.
    """
    if isinstance(scenario, dict):
        doc = scenario
        spec = parse_scenario(doc)
        fp = scenario_fingerprint(doc)
    else:
        spec, doc, fp = load_scenario(scenario)
    bud = dict(doc.get("budget", {}))
    if budget:
        bud.update(budget)
    report = ExperimentReport(scenario=spec.name, fingerprint=fp,
                              seed=seed, budget=bud)

    m_nodes = int(bud.get("m_nodes", 200))
    eps = float(bud.get("eps", 1e-3))
    particle_dt = float(bud.get("particle_dt", 5e-3))
    spine_dt = float(bud.get("spine_dt", 1e-2))
    w_reps = int(bud.get("w_replicates", 200))
    w_checkpoints = [float(t) for t in bud.get("w_checkpoints", (0.5, 1.0, 2.0))]
    s_reps = int(bud.get("spine_replicates", 10_000))
    s_checkpoints = [float(t) for t in bud.get("spine_checkpoints", (10.0, 20.0, 40.0))]
    s_horizon = float(bud.get("spine_horizon", max(s_checkpoints)))
    h_reps = int(bud.get("h_replicates", w_reps))
    h_checkpoint = float(bud.get("h_checkpoint",
                                 w_checkpoints[len(w_checkpoints) // 2]))

    sd = pt = None
    grid = ops = None

    t0 = time.perf_counter()
    try:
        grid = build_grid(spec.domain, m_nodes, spec.K)
        ops = build_operators(spec, grid)
        sd = principal_eigenpair(spec, ops)
        pt = phi_transform(spec, ops, sd)
        report.spectral = check_assumption1(sd)
        report.spectral["gap"] = sd.gap
        report.spectral["m_nodes"] = m_nodes
    except Exception as exc:
        report.errors["spectral"] = f"{type(exc).__name__}: {exc}"
    report.elapsed["spectral"] = time.perf_counter() - t0

    if sd is not None:
        t0 = time.perf_counter()
        try:
            iu = check_iu(spec, ops, sd)
            report.iu = {
                "times": iu.times.tolist(),
                "c_M": iu.c_M.tolist(),
                "delta": iu.delta.tolist(),
                "gap": iu.gap,
                "C_fit": iu.C_fit,
                "delta_monotone": iu.delta_monotone,
                "bound_ok": iu.bound_ok,
                "c9": iu.c9,
                "c10": iu.c10,
            }
        except Exception as exc:
            report.errors["iu"] = f"{type(exc).__name__}: {exc}"
        report.elapsed["iu"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            crit = llogl_integral(spec, grid, sd, fingerprint=fp)
            report.criterion = crit.to_dict()
        except Exception as exc:
            report.errors["criterion"] = f"{type(exc).__name__}: {exc}"
        report.elapsed["criterion"] = time.perf_counter() - t0

    series = None
    if pt is not None:
        t0 = time.perf_counter()
        try:
            series = run_spine_series(spec, pt, s_reps, s_horizon, spine_dt,
                                      seed, s_checkpoints, workers=workers)
            report.series = _series_summary(series)
            report.series["stationary_mean"] = series_mean_stationary(spec, pt)
            report.attachments["series"] = series
        except Exception as exc:
            report.errors["series"] = f"{type(exc).__name__}: {exc}"
        report.elapsed["series"] = time.perf_counter() - t0

    degen = None
    if sd is not None:
        t0 = time.perf_counter()
        try:
            traj = sim_particles(spec, sd, "phi", eps, max(w_checkpoints),
                                 particle_dt, seed, [0.0] + w_checkpoints,
                                 w_reps, workers=workers)
            phi_mass = grid.quad(sd.phi * sd.phi)  # <phi, phi dx> = 1
            degen = degeneracy_test(traj.times, traj.W, phi_mass)
            report.attachments["w_traj"] = traj
            report.w_stats = {
                "checkpoints": traj.times.tolist(),
                "mean": traj.W.mean(axis=1).tolist(),
                "se": (traj.W.std(axis=1, ddof=1) / np.sqrt(traj.W.shape[1])).tolist(),
                "median": np.median(traj.W, axis=1).tolist(),
                "mean_particles": traj.counts.mean(axis=1).tolist(),
                "reps": w_reps,
                "eps": eps,
                "dt": particle_dt,
                "meta": traj.meta,
            }
            report.degeneracy = {
                "verdict": degen["verdict"],
                "reason": degen["reason"],
                "checkpoints": degen["checkpoints"].tolist(),
                "median": degen["median"].tolist(),
            }
        except Exception as exc:
            report.errors["particles"] = f"{type(exc).__name__}: {exc}"
        report.elapsed["particles"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            rows = []
            for x0, i0 in _point_starts(spec, grid):
                tr = sim_particles(spec, sd, ("point", x0, i0), eps,
                                   h_checkpoint, particle_dt, seed,
                                   [h_checkpoint], h_reps, workers=workers)
                w = tr.W[-1]
                phv = float(np.interp(x0, grid.nodes, sd.phi[:, i0]))
                rows.append({
                    "x": x0, "type": i0, "phi": phv,
                    "mean_W": float(w.mean()),
                    "se_W": float(w.std(ddof=1) / np.sqrt(w.size)),
                    "ratio": float(w.mean() / phv),
                    "se_ratio": float(w.std(ddof=1) / np.sqrt(w.size) / phv),
                    "T": h_checkpoint, "reps": h_reps,
                })
            report.h_table = rows
        except Exception as exc:
            report.errors["h_table"] = f"{type(exc).__name__}: {exc}"
        report.elapsed["h_table"] = time.perf_counter() - t0

    llogl = None if report.criterion is None else report.criterion["llogl_finite"]
    report.consistent, report.consistency_reason = _consistency(
        llogl, degen, series)
    return report
