"""Command line front end.

Subcommands cover each stage of the laboratory: ``validate`` (model checks),
``spectral`` (eigenpair + mixing diagnostics), ``evolve`` (deterministic
identity checks), ``simulate`` (particle martingale batches), ``spine``
(series statistics along the transformed path), ``criterion`` (the L log L
verdict) and ``verify-all`` (the full dichotomy experiment).

Exit codes: 0 success (for verify-all: every consistency flag true);
1 verify-all finished but a consistency flag is false; 2 malformed scenario
(diagnostic naming the offending field on stderr); 3 numerical failure with
whatever partial report was available persisted to the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import reports
from .criterion import dichotomy_experiment, llogl_integral
from .discretize import build_grid, build_operators
from .evolve import StabilityError, solve_cumulant, spine_laplace, theorem1_check
from .model import ValidationError
from .scenarios import BUILTIN_SCENARIOS, load_scenario
from .simulate import (ResourceError, degeneracy_test, run_spine_series,
                       series_mean_stationary, sim_particles,
                       sim_spine_decomposition)
from .spectral import (check_assumption1, check_iu, phi_transform,
                       principal_eigenpair)

__all__ = ["main"]

NUMERICAL_ERRORS = (StabilityError, ResourceError, FloatingPointError,
                    np.linalg.LinAlgError)


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("SPINELAB_WORKERS")
    return max(1, int(env)) if env else 1


def _budget(doc: dict, args) -> dict:
    """Scenario budget with CLI overrides folded in."""
    bud = dict(doc.get("budget", {}))
    if args.nodes is not None:
        bud["m_nodes"] = args.nodes
    if args.eps is not None:
        bud["eps"] = args.eps
    if getattr(args, "dt", None) is not None:
        # one flag, one meaning per subcommand
        key = {"evolve": "dt", "simulate": "particle_dt",
               "spine": "spine_dt"}.get(args.command)
        if key is None:
            bud["dt"] = args.dt
            bud["particle_dt"] = args.dt
        else:
            bud[key] = args.dt
    if getattr(args, "replicates", None) is not None:
        bud["w_replicates"] = args.replicates
        bud["spine_replicates"] = args.replicates
        bud["h_replicates"] = args.replicates
    return bud


def _spectral_bits(spec, bud):
    grid = build_grid(spec.domain, int(bud.get("m_nodes", 200)), spec.K)
    ops = build_operators(spec, grid)
    sd = principal_eigenpair(spec, ops)
    return grid, ops, sd


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_validate(args) -> int:
    spec, doc, fp = load_scenario(args.scenario)
    xs = np.linspace(spec.domain.lo, spec.domain.hi, 103)[1:-1]
    bn = np.stack([spec.b(xs, i) * spec.n(xs, i) for i in range(spec.K)], axis=1)
    C = bn[:, :, None] * spec.p(xs)
    payload = {
        "command": "validate",
        "scenario": spec.name,
        "K": spec.K,
        "convention": spec.convention,
        "valid": True,
        "symmetry_residual": float(np.max(np.abs(C - np.swapaxes(C, 1, 2)))),
        "kernels": [{
            "type": i,
            "family": k.family,
            "llogl_finite": bool(k.llogl_finite),
            "mass": k.total_mass(),
            "mean": k.mean(),
        } for i, k in enumerate(spec.kernels)],
    }
    reports.write_report(_out_path(args, "report.json"), payload,
                         fingerprint=fp, seed=args.seed,
                         budget=doc.get("budget", {}))
    print(f"{spec.name}: valid (K={spec.K}, convention={spec.convention})")
    return 0


def cmd_spectral(args) -> int:
    spec, doc, fp = load_scenario(args.scenario)
    bud = _budget(doc, args)
    grid, ops, sd = _spectral_bits(spec, bud)
    iu = check_iu(spec, ops, sd)
    payload = {
        "command": "spectral",
        "scenario": spec.name,
        "lam1": sd.lam1,
        "lam2": sd.lam2,
        "gap": sd.gap,
        "assumption1": check_assumption1(sd),
        "iu": {"times": iu.times, "c_A": iu.c_A, "c_M": iu.c_M,
               "delta": iu.delta, "C_fit": iu.C_fit, "gap": iu.gap,
               "delta_monotone": iu.delta_monotone, "bound_ok": iu.bound_ok,
               "c9": iu.c9, "c10": iu.c10},
        "phi": {"nodes": grid.nodes, "values": sd.phi},
    }
    reports.write_report(_out_path(args, "report.json"), payload,
                         fingerprint=fp, seed=args.seed, budget=bud)
    print(f"{spec.name}: lam1={sd.lam1:.6f} lam2={sd.lam2:.6f} gap={sd.gap:.6f} "
          f"iu_bound_ok={iu.bound_ok}")
    return 0


def cmd_evolve(args) -> int:
    spec, doc, fp = load_scenario(args.scenario)
    bud = _budget(doc, args)
    grid, ops, sd = _spectral_bits(spec, bud)
    g = float(bud.get("g_const", 0.2))
    t = float(bud.get("t_identity", 1.0))
    dt = float(bud.get("dt", 1e-3))
    chk = theorem1_check(spec, ops, sd, g, t, dt)
    pt = phi_transform(spec, ops, sd)
    spine_val = spine_laplace(spec, ops, sd, pt, g, t, dt)
    ratio = chk["lhs"] / chk["plain"]
    payload = {
        "command": "evolve",
        "scenario": spec.name,
        "g_const": g,
        "t": t,
        "dt": dt,
        "identity": {k: chk[k] for k in
                     ("lhs", "plain", "consistent_convention")},
        "pre": chk["pre"],
        "post": chk["post"],
        "spine_route": {"value": spine_val,
                        "tilted_over_plain": ratio,
                        "residual": abs(spine_val - ratio)},
    }
    reports.write_report(_out_path(args, "report.json"), payload,
                         fingerprint=fp, seed=args.seed, budget=bud)
    u_traj = solve_cumulant(spec, ops, g, t, dt)
    reports.write_field_csv(_out_path(args, "fields.csv"), u_traj,
                            times=np.linspace(0.0, t, 11))
    print(f"{spec.name}: residual pre={chk['pre']['residual']:.3e} "
          f"post={chk['post']['residual']:.3e} "
          f"consistent={chk['consistent_convention']} "
          f"spine_route_residual={abs(spine_val - ratio):.3e}")
    return 0


def cmd_simulate(args) -> int:
    spec, doc, fp = load_scenario(args.scenario)
    bud = _budget(doc, args)
    grid, ops, sd = _spectral_bits(spec, bud)
    eps = float(bud.get("eps", 1e-3))
    dt = float(bud.get("particle_dt", 5e-3))
    reps = int(bud.get("w_replicates", 200))
    cps = [float(x) for x in bud.get("w_checkpoints", (0.5, 1.0, 2.0))]
    T = args.horizon if args.horizon is not None else max(cps)
    cps = [t for t in cps if t <= T + 1e-12]
    if not cps or cps[-1] < T:
        cps.append(T)
    workers = _workers(args)
    phi_mass = grid.quad(sd.phi * sd.phi)
    if args.decomposition:
        pt = phi_transform(spec, ops, sd)
        traj = sim_spine_decomposition(spec, sd, pt, eps, T, dt, args.seed,
                                       [0.0] + cps, reps, workers=workers)
    else:
        traj = sim_particles(spec, sd, "phi", eps, T, dt, args.seed,
                             [0.0] + cps, reps, workers=workers)
    degen = degeneracy_test(traj.times, traj.W, phi_mass)
    payload = {
        "command": "simulate",
        "scenario": spec.name,
        "decomposition": bool(args.decomposition),
        "times": traj.times,
        "mean_W": traj.W.mean(axis=1),
        "se_W": traj.W.std(axis=1, ddof=1) / np.sqrt(traj.W.shape[1]),
        "median_W": np.median(traj.W, axis=1),
        "mean_particles": traj.counts.mean(axis=1),
        "phi_mass": phi_mass,
        "degeneracy": {"verdict": degen["verdict"], "reason": degen["reason"]},
        "meta": traj.meta,
    }
    if traj.M is not None:
        payload["mean_M"] = traj.M.mean(axis=1)
    reports.write_report(_out_path(args, "report.json"), payload,
                         fingerprint=fp, seed=args.seed, budget=bud)
    reports.write_trajectories_csv(_out_path(args, "trajectories.csv"), traj)
    print(f"{spec.name}: mean W at T={T:g} is {traj.W[-1].mean():.4f} "
          f"(se {traj.W[-1].std(ddof=1) / np.sqrt(reps):.4f}); "
          f"verdict {degen['verdict']}")
    return 0


def cmd_spine(args) -> int:
    spec, doc, fp = load_scenario(args.scenario)
    bud = _budget(doc, args)
    grid, ops, sd = _spectral_bits(spec, bud)
    pt = phi_transform(spec, ops, sd)
    dt = float(bud.get("spine_dt", 1e-2))
    reps = int(bud.get("spine_replicates", 10_000))
    cps = [float(x) for x in bud.get("spine_checkpoints", (10.0, 20.0, 40.0))]
    T = args.horizon if args.horizon is not None else \
        float(bud.get("spine_horizon", max(cps)))
    cps = [t for t in cps if t <= T + 1e-12]
    if not cps or cps[-1] < T:
        cps.append(T)
    series = run_spine_series(spec, pt, reps, T, dt, args.seed, cps,
                              workers=_workers(args))
    payload = {
        "command": "spine",
        "scenario": spec.name,
        "checkpoints": series["checkpoints"],
        "mean_S": series["mean_S"],
        "se_S": series["se_S"],
        "median_S": series["median_S"],
        "exceedance": {str(L): v for L, v in series["exceedance"].items()},
        "stationary_mean": series_mean_stationary(spec, pt),
        "n_rep": series["n_rep"],
        "n_jumps": series["n_jumps"],
    }
    reports.write_report(_out_path(args, "report.json"), payload,
                         fingerprint=fp, seed=args.seed, budget=bud)
    reports.write_series_csv(_out_path(args, "series.csv"), series)
    print(f"{spec.name}: mean S at T={cps[-1]:g} is {series['mean_S'][-1]:.4f} "
          f"(se {series['se_S'][-1]:.4f})")
    return 0


def cmd_criterion(args) -> int:
    spec, doc, fp = load_scenario(args.scenario)
    bud = _budget(doc, args)
    grid, ops, sd = _spectral_bits(spec, bud)
    rep = llogl_integral(spec, grid, sd, fingerprint=fp)
    payload = {"command": "criterion", "scenario": spec.name}
    payload.update(rep.to_dict())
    reports.write_report(_out_path(args, "report.json"), payload,
                         fingerprint=fp, seed=args.seed, budget=bud)
    if rep.llogl_finite:
        print(f"{spec.name}: L log L integral finite, total {rep.total:.6f}")
    else:
        print(f"{spec.name}: L log L integral divergent "
              f"(truncated totals {rep.certificate['totals']})")
    return 0


def _scenario_key(name_or_path: str) -> str:
    if name_or_path in BUILTIN_SCENARIOS:
        return name_or_path
    base = os.path.basename(name_or_path)
    return os.path.splitext(base)[0] or "scenario"


def cmd_verify_all(args) -> int:
    workers = _workers(args)
    any_false = False
    any_error = False
    for sc in args.scenario:
        # malformed scenarios abort the whole invocation with exit 2
        _spec, doc, _fp = load_scenario(sc)
        bud_over = {}
        if args.nodes is not None:
            bud_over["m_nodes"] = args.nodes
        if args.eps is not None:
            bud_over["eps"] = args.eps
        if args.replicates is not None:
            bud_over["w_replicates"] = args.replicates
            bud_over["spine_replicates"] = args.replicates
            bud_over["h_replicates"] = args.replicates
        rep = dichotomy_experiment(sc, budget=bud_over, seed=args.seed,
                                   workers=workers)
        out_dir = os.path.join(args.out, _scenario_key(sc))
        reports.write_report(os.path.join(out_dir, "report.json"),
                             dict(rep.to_dict(), command="verify-all"))
        if "w_traj" in rep.attachments:
            reports.write_trajectories_csv(
                os.path.join(out_dir, "trajectories.csv"),
                rep.attachments["w_traj"])
        if "series" in rep.attachments:
            reports.write_series_csv(os.path.join(out_dir, "series.csv"),
                                     rep.attachments["series"])
        flag = "true" if rep.consistent else "false"
        print(f"{rep.scenario}: consistent={flag} ({rep.consistency_reason})")
        if rep.errors:
            any_error = True
            for stage, msg in rep.errors.items():
                print(f"  stage {stage} failed: {msg}", file=sys.stderr)
        if not rep.consistent:
            any_false = True
    if any_error:
        return 3
    return 1 if any_false else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinelab",
        description="Numerical laboratory for multitype superdiffusions "
                    "with non-local branching.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi_scenario=False):
        if multi_scenario:
            p.add_argument("--scenario", nargs="+", required=True,
                           help="builtin scenario names or JSON paths")
        else:
            p.add_argument("--scenario", required=True,
                           help="builtin scenario name or a JSON path "
                                f"(builtin: {', '.join(BUILTIN_SCENARIOS)})")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--nodes", type=int, default=None,
                       help="override grid size M_nodes")
        p.add_argument("--eps", type=float, default=None,
                       help="override particle mass epsilon")
        p.add_argument("--workers", type=int, default=None,
                       help="worker count (default: SPINELAB_WORKERS or 1)")

    p = sub.add_parser("validate", help="structural model checks")
    common(p)

    p = sub.add_parser("spectral", help="principal eigenpair and mixing bounds")
    common(p)

    p = sub.add_parser("evolve", help="deterministic identity checks")
    common(p)
    p.add_argument("--dt", type=float, default=None, help="solver step")

    p = sub.add_parser("simulate", help="particle martingale batches")
    common(p)
    p.add_argument("--dt", type=float, default=None, help="path step")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--decomposition", action="store_true",
                   help="use the spine-immigration construction (records M)")

    p = sub.add_parser("spine", help="discounted immigration series statistics")
    common(p)
    p.add_argument("--dt", type=float, default=None, help="path step")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--horizon", type=float, default=None)

    p = sub.add_parser("criterion", help="L log L integral and verdict")
    common(p)

    p = sub.add_parser("verify-all", help="full dichotomy experiment")
    common(p, multi_scenario=True)
    p.add_argument("--replicates", type=int, default=None)

    return parser


_HANDLERS = {
    "validate": cmd_validate,
    "spectral": cmd_spectral,
    "evolve": cmd_evolve,
    "simulate": cmd_simulate,
    "spine": cmd_spine,
    "criterion": cmd_criterion,
    "verify-all": cmd_verify_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except ValidationError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        payload = {"command": args.command, "error": str(exc),
                   "error_type": type(exc).__name__}
        partial = getattr(exc, "partial", None)
        if partial is not None:
            try:
                reports.write_trajectories_csv(
                    _out_path(args, "trajectories.csv"), partial)
                payload["partial_trajectories"] = "trajectories.csv"
            except Exception:
                pass
        try:
            reports.write_report(_out_path(args, "report.json"), payload,
                                 seed=args.seed)
        except Exception:
            pass
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
