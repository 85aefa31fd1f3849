"""Plain switched-diffusion paths and the Monte Carlo Feynman-Kac oracle.

The motion follows the divergence-form generator: position SDE
dX = a'(X) dt + sqrt(2 a(X)) dW for the active type, killed at the boundary
(with a Brownian-bridge crossing test to curb the O(sqrt(dt)) leak), and type
switches i -> j at rate b n p_ij by first-order thinning.

``mc_nlfk`` estimates the weighted functional

    E[ exp(int_0^t q(t-s, X_s, Y_s) ds) * prod_jumps factor(t-s, X_s, i, j)
       * f(X_t, Y_t) ; survived ]

whose density solves the non-local Feynman-Kac equation stepped by
``evolve.nlfk_solve``; agreement of the two routes validates the mild
equation itself.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..discretize import Grid
from ..evolve import FKWeightSpec
from ..model import ModelSpec
from .rng import NS_NLFK, RngStream, iter_blocks

__all__ = ["SwitchedPath", "sim_switched", "batch_paths", "mc_nlfk"]


@dataclass
class SwitchedPath:
    """One recorded path: positions, right-continuous types, jumps, kill."""

    dt: float
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    jump_times: np.ndarray
    jump_pre: np.ndarray
    jump_post: np.ndarray
    jump_x: np.ndarray
    killed: bool = False
    kill_time: float = np.nan
    meta: dict = field(default_factory=dict)


def _move_and_kill(spec: ModelSpec, x, y, dt, rng, lo, hi):
    """One diffusion step for a mixed-type batch; returns (x_new, crossed)."""
    z = rng.standard_normal(x.size)
    u = rng.random(x.size)
    xn = np.empty_like(x)
    crossed = np.zeros(x.size, dtype=bool)
    for i in range(spec.K):
        m = y == i
        if not m.any():
            continue
        xi = x[m]
        a = spec.a(xi, i)
        xn_i = xi + spec.a_prime(xi, i) * dt + np.sqrt(2.0 * a * dt) * z[m]
        out = (xn_i <= lo) | (xn_i >= hi)
        # bridge crossing probability for steps that stayed inside
        p_lo = np.exp(-np.maximum(xi - lo, 0.0) * np.maximum(xn_i - lo, 0.0) / (a * dt))
        p_hi = np.exp(-np.maximum(hi - xi, 0.0) * np.maximum(hi - xn_i, 0.0) / (a * dt))
        crossed[m] = out | (u[m] < np.minimum(p_lo + p_hi, 1.0))
        xn[m] = xn_i
    return xn, crossed


def _switch(spec: ModelSpec, x, y, dt, rng):
    """First-order thinning of the switch clock; returns (jumped, new_y)."""
    rate = np.empty(x.size)
    for i in range(spec.K):
        m = y == i
        if m.any():
            rate[m] = spec.b(x[m], i) * spec.n(x[m], i)
    jumped = rng.random(x.size) < rate * dt
    new_y = y.copy()
    if jumped.any():
        xj = x[jumped]
        rows = spec.p(xj)[np.arange(xj.size), y[jumped]]
        cdf = np.cumsum(rows, axis=1)
        draw = rng.random(xj.size)
        new_y[jumped] = np.argmax(draw[:, None] < cdf, axis=1)
    return jumped, new_y


def sim_switched(spec: ModelSpec, x0: float, i0: int, T: float, dt: float,
                 rng: np.random.Generator, grid: Grid | None = None) -> SwitchedPath:
    """One fully recorded path of the killed switched diffusion."""
    lo, hi = spec.domain.lo, spec.domain.hi
    if not (lo < x0 < hi):
        raise ValueError(f"x0={x0} outside the open domain ({lo}, {hi})")
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    _check_rate_bound(spec, dt)
    times = np.linspace(0.0, T, n_steps + 1)
    xs = np.full(n_steps + 1, np.nan)
    ys = np.full(n_steps + 1, -1, dtype=int)
    xs[0], ys[0] = x0, i0
    jt, jpre, jpost, jx = [], [], [], []
    x = np.array([float(x0)])
    y = np.array([int(i0)], dtype=int)
    killed, kill_time = False, np.nan
    for k in range(n_steps):
        x, crossed = _move_and_kill(spec, x, y, dt, rng, lo, hi)
        if crossed[0]:
            killed, kill_time = True, times[k + 1]
            break
        jumped, y = _switch(spec, x, y, dt, rng)
        if jumped[0]:
            jt.append(times[k + 1])
            jpre.append(int(ys[k]))
            jpost.append(int(y[0]))
            jx.append(float(x[0]))
        xs[k + 1], ys[k + 1] = x[0], y[0]
    return SwitchedPath(dt=dt, times=times, x=xs, y=ys,
                        jump_times=np.asarray(jt, dtype=float),
                        jump_pre=np.asarray(jpre, dtype=int),
                        jump_post=np.asarray(jpost, dtype=int),
                        jump_x=np.asarray(jx, dtype=float),
                        killed=killed, kill_time=kill_time)


def _check_rate_bound(spec: ModelSpec, dt: float, n_probe: int = 33):
    x = np.linspace(spec.domain.lo, spec.domain.hi, n_probe + 2)[1:-1]
    top = max(float(np.max(spec.b(x, i) * spec.n(x, i))) for i in range(spec.K))
    if top * dt > 0.1:
        raise ValueError(
            f"switch rate * dt = {top * dt:.3f} > 0.1; use dt <= {0.1 / top:.4g}")


def batch_paths(spec: ModelSpec, x0, i0, T: float, dt: float, n: int,
                rng: np.random.Generator, sample_times=()) -> dict:
    """Vectorized batch of killed switched paths; records endpoints.

    ``sample_times`` requests (x, y, alive) snapshots at those times for
    occupation statistics.
    """
    lo, hi = spec.domain.lo, spec.domain.hi
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    _check_rate_bound(spec, dt)
    x = np.full(n, float(x0)) if np.isscalar(x0) else np.asarray(x0, dtype=float).copy()
    y = (np.full(n, int(i0), dtype=int) if np.isscalar(i0)
         else np.asarray(i0, dtype=int).copy())
    alive = np.ones(n, dtype=bool)
    kill_time = np.full(n, np.nan)
    sample_steps = {int(round(tv / dt)): tv for tv in sample_times}
    samples = {}
    for k in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size:
            xa, crossed = _move_and_kill(spec, x[idx], y[idx], dt, rng, lo, hi)
            x[idx] = xa
            dead = idx[crossed]
            alive[dead] = False
            kill_time[dead] = (k + 1) * dt
            live = idx[~crossed]
            if live.size:
                _, ynew = _switch(spec, x[live], y[live], dt, rng)
                y[live] = ynew
        if (k + 1) in sample_steps:
            samples[sample_steps[k + 1]] = (x.copy(), y.copy(), alive.copy())
    return {"x": x, "y": y, "alive": alive, "kill_time": kill_time,
            "samples": samples, "dt": dt}


def _interp_field(grid: Grid, field_mk: np.ndarray, x, i: int,
                  boundary_zero: bool) -> np.ndarray:
    nodes = grid.nodes
    col = field_mk[:, i]
    if boundary_zero:
        xk = np.concatenate(([grid.domain.lo], nodes, [grid.domain.hi]))
        fk = np.concatenate(([0.0], col, [0.0]))
        return np.interp(x, xk, fk)
    return np.interp(x, nodes, col)


def _mc_nlfk_block(spec: ModelSpec, grid: Grid, weights: FKWeightSpec,
                   f_mk: np.ndarray, x0, i0, t: float, dt: float,
                   n: int, rng: np.random.Generator):
    lo, hi = spec.domain.lo, spec.domain.hi
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    x = np.full(n, float(x0))
    y = np.full(n, int(i0), dtype=int)
    alive = np.ones(n, dtype=bool)
    logw = np.zeros(n)
    fac = np.ones(n)
    for k in range(n_steps):
        tau_mid = t - (k + 0.5) * dt
        idx = np.flatnonzero(alive)
        if not idx.size:
            break
        # potential accumulated at the step midpoint in the tau slot
        q_mk = weights.q(tau_mid)
        for i in range(spec.K):
            m = idx[y[idx] == i]
            if m.size:
                logw[m] += dt * _interp_field(grid, q_mk, x[m], i, boundary_zero=False)
        xa, crossed = _move_and_kill(spec, x[idx], y[idx], dt, rng, lo, hi)
        x[idx] = xa
        alive[idx[crossed]] = False
        live = idx[~crossed]
        if live.size:
            jumped, ynew = _switch(spec, x[live], y[live], dt, rng)
            jm = live[jumped]
            if jm.size:
                fac_mkk = weights.factor(tau_mid)
                pre, post = y[jm], ynew[jumped]
                for i in range(spec.K):
                    for j in range(spec.K):
                        sel = jm[(pre == i) & (post == j)]
                        if sel.size:
                            fac[sel] *= np.interp(x[sel], grid.nodes, fac_mkk[:, i, j])
            y[live] = ynew
    vals = np.zeros(n)
    if alive.any():
        for i in range(spec.K):
            m = np.flatnonzero(alive & (y == i))
            if m.size:
                vals[m] = _interp_field(grid, f_mk, x[m], i, boundary_zero=True)
    w = np.exp(logw) * fac * vals
    return w.sum(), (w * w).sum(), int(alive.sum())


def mc_nlfk(spec: ModelSpec, grid: Grid, weights: FKWeightSpec, f, x0: float,
            i0: int, t: float, dt: float, reps: int, seed: int,
            block_size: int = 10000, workers: int = 1) -> dict:
    """Monte Carlo estimate of the weighted Feynman-Kac functional.

    Returns the estimate with its standard error; replicates run in fixed
    blocks with per-block streams so the result depends only on the seed.
    """
    from ..evolve import as_field
    f_mk = as_field(grid, f)
    blocks = list(iter_blocks(reps, block_size))

    def run(blk):
        b, start, stop = blk
        rng = RngStream(seed, NS_NLFK, b).generator()
        return _mc_nlfk_block(spec, grid, weights, f_mk, x0, i0, t, dt,
                              stop - start, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(blk) for blk in blocks]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n_alive = sum(p[2] for p in parts)
    mean = s1 / reps
    var = max(s2 / reps - mean * mean, 0.0)
    se = float(np.sqrt(var / reps))
    return {"estimate": float(mean), "se": se, "reps": reps,
            "survived_fraction": n_alive / reps, "t": t, "dt": dt,
            "weights": weights.label}
