"""The spine path and the discounted immigration series S_T.

Under the phi-transform the motion becomes a conservative ergodic switched
diffusion with invariant density phi^2.  At its type-switch times the
decomposition immigrates mass with size-biased marks; the discounted sum

    S_T = sum_{switches s <= T} e^(-lam1 s) * m_s * pi(phi)(X_s)

controls whether the martingale limit W_inf is degenerate:

* light-tailed marks: S_T converges (L log L integral finite);
* heavy log-Pareto marks with beta <= 2: single terms of size e^L keep
  arriving at all times and S_T blows up (integral divergent).

This demo prints both behaviours side by side from the same machinery.

Run:  python3 demos/03_spine_and_series.py
"""

import numpy as np

from spinelab import (build_grid, build_operators, llogl_integral,
                      load_scenario, phi_transform, principal_eigenpair)
from spinelab.simulate import run_spine_series, series_mean_stationary


def series_table(name, n_rep, horizon, dt, checkpoints, seed):
    spec, doc, _ = load_scenario(name)
    grid = build_grid(spec.domain, 200, spec.K)
    ops = build_operators(spec, grid)
    sd = principal_eigenpair(spec, ops)
    pt = phi_transform(spec, ops, sd)

    crit = llogl_integral(spec, grid, sd)
    verdict = "finite" if crit.llogl_finite else "divergent"
    print(f"\n=== {spec.name}: L log L integral {verdict} ===")
    if crit.llogl_finite:
        mean_inf = series_mean_stationary(spec, pt)
        print(f"stationary-start E S_inf = {mean_inf:.4f}")
    else:
        print(f"truncation certificate (growing): "
              f"{[round(v, 3) for v in crit.certificate['totals']]}")

    series = run_spine_series(spec, pt, n_rep, horizon, dt, seed, checkpoints)
    print(f"{n_rep} spine replicates, horizon {horizon}, dt {dt}")
    print(f"{'T':>6} {'mean S_T':>10} {'median':>8} "
          f"{'P(S>1)':>8} {'P(S>10)':>8} {'P(S>100)':>9}")
    for k, T in enumerate(series["checkpoints"]):
        mean = series["mean_S"][k]
        mean_txt = f"{mean:10.4f}" if np.isfinite(mean) else f"{'inf':>10}"
        print(f"{T:6.0f} {mean_txt} {series['median_S'][k]:8.4f} "
              f"{series['exceedance'][1.0][k]:8.4f} "
              f"{series['exceedance'][10.0][k]:8.4f} "
              f"{series['exceedance'][100.0][k]:9.4f}")


def main():
    series_table("canon2", n_rep=5000, horizon=40.0, dt=0.02,
                 checkpoints=[10.0, 20.0, 40.0], seed=1)
    series_table("canonh", n_rep=5000, horizon=40.0, dt=0.02,
                 checkpoints=[10.0, 20.0, 40.0], seed=1)
    print("\nreading: the light-tailed series settles at its stationary "
          "mean;\nthe heavy-tailed exceedance fractions keep climbing -- "
          "single huge\nmarks dominate, the signature of a degenerate "
          "martingale limit.")


if __name__ == "__main__":
    main()
