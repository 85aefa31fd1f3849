"""Branching particles, the martingale W_T, and the full dichotomy.

An epsilon-mass branching particle system approximates the superprocess:
each particle diffuses with its type's generator, dies at rate b, and at
death spawns a type-switched sibling plus a size-biased cluster of mass.
W_T = e^(-lam1 T) <phi, X_T> is a nonnegative martingale, so its empirical
mean stays at <phi, mu> -- but its pathwise fate depends on the offspring
tails:

* light tails:  W_T settles at a nontrivial limit (L1 convergence);
* heavy tails (L log L divergent): W_T -> 0 along almost every run while
  the mean is propped up by ever rarer, ever larger excursions.

The dichotomy experiment runs every stage (spectrum, mixing bound,
criterion, spine series, particle batches, point-start ratios) and checks
the verdicts agree with the integral.  Reduced budgets keep this demo at
a couple of minutes; the builtin budgets are the acceptance-scale ones.

Run:  python3 demos/04_particles_and_dichotomy.py
"""

import numpy as np

from spinelab import dichotomy_experiment

REDUCED = {
    "canon2": {"m_nodes": 120, "eps": 2e-3, "particle_dt": 5e-3,
               "spine_dt": 2e-2, "w_replicates": 120,
               "w_checkpoints": [0.5, 1.0], "spine_replicates": 2000,
               "spine_checkpoints": [10.0, 20.0], "spine_horizon": 20.0,
               "h_replicates": 40, "h_checkpoint": 0.5},
    "canonh": {"m_nodes": 120, "eps": 2e-3, "particle_dt": 5e-3,
               "spine_dt": 2e-2, "w_replicates": 120,
               "w_checkpoints": [2.0, 4.0, 8.0], "spine_replicates": 2000,
               "spine_checkpoints": [10.0, 20.0], "spine_horizon": 20.0,
               "h_replicates": 40, "h_checkpoint": 2.0},
}


def show(name, seed):
    rep = dichotomy_experiment(name, budget=REDUCED[name], seed=seed)
    print(f"\n=== {rep.scenario} ===")
    crit = "finite" if rep.criterion["llogl_finite"] else "divergent"
    print(f"L log L integral: {crit}")
    print(f"{'T':>5} {'mean W_T':>9} {'se':>7} {'median':>8} {'particles':>10}")
    for k, t in enumerate(rep.w_stats["checkpoints"]):
        print(f"{t:5.1f} {rep.w_stats['mean'][k]:9.4f} "
              f"{rep.w_stats['se'][k]:7.4f} {rep.w_stats['median'][k]:8.4f} "
              f"{rep.w_stats['mean_particles'][k]:10.0f}")
    print(f"W verdict: {rep.degeneracy['verdict']}")
    print("point-start ratios mean W_T / phi(x,i) "
          "(flat <-> no pocket of early degeneracy):")
    for row in rep.h_table:
        print(f"  x={row['x']:.3f} type={row['type']}: "
              f"ratio {row['ratio']:.3f} +- {row['se_ratio']:.3f}")
    print(f"consistent with the criterion: {rep.consistent} "
          f"({rep.consistency_reason})")
    for stage, secs in rep.elapsed.items():
        print(f"  [{stage}: {secs:.1f}s]", end="")
    print()


def main():
    np.set_printoptions(precision=4)
    show("canon2", seed=5)
    show("canonh", seed=3)


if __name__ == "__main__":
    main()
