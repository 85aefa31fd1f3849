"""Deterministic evolution: cumulant flow, linearization, non-local Feynman-Kac.

Solvers on the grid, all second order in time:

* ``solve_mean``      e^{tM} f, exact through the spectral factorization;
* ``solve_cumulant``  the log-Laplace flow  du/dt = M u + b zeta2(x,.;u),
  Crank-Nicolson in the stiff linear part M and explicit trapezoidal
  (predictor-corrector) in the bounded nonlinearity b zeta2 <= 0;
* ``solve_linearized``  the derivative v of the cumulant in a tilt direction,
  dv/dt = M v - b [m - eta(.;pi(u_t))] (P v), v(0) = phi;
* ``nlfk_solve``      the mild equation of a multiplicative path functional
  with killing-corrected potential q and jump factors: for weights
  (q, factor) the density w of
      Pi_x [ e^{int_0^t q(t-s, xi_s) ds} prod_{jumps} factor(t-s, ...) f(xi_t) ]
  solves  dw_i/dtau = L_i w_i + q w_i + sum_{j != i} q_ij [factor_ij w_j - w_i].

With the pre-jump convention the theorem-1 jump factor is constant along the
destination index, and the linearized route and the Feynman-Kac route become
the same continuum equation; ``theorem1_check`` verifies the measure-change
identity by solving both with structurally different splittings (the v-solver
is implicit in all of M, the w-solver only in L) so the residual is a genuine
second-order discrepancy that must vanish under refinement for the
consistent convention only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator
from scipy.sparse.linalg import splu

from .discretize import Grid, Operators
from .kernels import ParetoLog
from .model import ModelSpec
from .spectral import PhiTransform, SpectralData

__all__ = [
    "StabilityError",
    "EvolutionTrajectory",
    "stable_dt",
    "as_field",
    "solve_mean",
    "solve_cumulant",
    "laplace_functional",
    "solve_linearized",
    "FKWeightSpec",
    "nlfk_solve",
    "theorem1_weights",
    "constant_weights",
    "tilted_laplace",
    "theorem1_check",
    "spine_laplace",
]


class StabilityError(RuntimeError):
    """A time-stepper produced non-finite values; reduce dt."""


def as_field(grid: Grid, g) -> np.ndarray:
    """Accept an (M, K) array, a scalar, or a callable (x, i) -> values."""
    if callable(g):
        return grid.evaluate(g)
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        return np.full((grid.M, grid.K), float(g))
    if g.shape != (grid.M, grid.K):
        raise ValueError(f"field must have shape {(grid.M, grid.K)}, got {g.shape}")
    return g.copy()


def stable_dt(spec: ModelSpec, grid: Grid, safety: float = 0.1) -> float:
    """Step bound for the explicit branching terms: b * m * dt <= safety.

    |d zeta2 / d kappa| <= m, so the explicitly treated nonlinearity has
    Lipschitz constant at most max b m; the CN-treated linear part imposes
    no constraint.
    """
    x = grid.nodes
    lip = max(float(np.max(spec.b(x, i) * np.maximum(spec.m(x, i), 1e-12)))
              for i in range(spec.K))
    return safety / lip


@dataclass
class EvolutionTrajectory:
    """Time slices of a field flow on the uniform step grid."""

    times: np.ndarray            # (n+1,)
    fields: np.ndarray           # (n+1, M, K)
    grid: Grid

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]

    def at(self, tau) -> np.ndarray:
        """Linear interpolation in time (second-order consistent)."""
        tau = float(tau)
        t_end = float(self.times[-1])
        if tau <= 0.0:
            return self.fields[0]
        if tau >= t_end:
            return self.fields[-1]
        s = tau / self.dt
        j = min(int(s), self.times.size - 2)
        lam = s - j
        return (1.0 - lam) * self.fields[j] + lam * self.fields[j + 1]

    def max_abs(self) -> float:
        return float(np.abs(self.fields).max())


def _check_finite(arr, what: str, dt: float):
    if not np.all(np.isfinite(arr)):
        raise StabilityError(
            f"{what} produced non-finite values at dt={dt:g}; retry with a smaller "
            "step (see stable_dt)")


def solve_mean(sd: SpectralData, f, t: float, times=None) -> np.ndarray | EvolutionTrajectory:
    """e^{tM} f through the spectral factorization (exact in time)."""
    if t < 0:
        raise ValueError(f"horizon must be nonnegative, got t={t}")
    grid = sd.grid
    fv = grid.pack(as_field(grid, f))
    if times is None:
        return grid.unpack(sd.basis.apply(t, fv))
    times = np.asarray(times, dtype=float)
    fields = np.stack([grid.unpack(sd.basis.apply(tv, fv)) for tv in times])
    return EvolutionTrajectory(times=times, fields=fields, grid=grid)


def _fast_zeta2(kernel, kmax: float):
    """Vectorized zeta2; quadrature families go through a monotone table."""
    if not isinstance(kernel, ParetoLog):
        return kernel.zeta2
    grid = np.linspace(0.0, max(kmax, 1e-6), 257)
    vals = kernel.zeta2(grid)
    interp = PchipInterpolator(grid, vals, extrapolate=False)
    top = float(grid[-1])
    return lambda k: interp(np.clip(k, 0.0, top))


def _fast_eta(kernel, lmax: float):
    if not isinstance(kernel, ParetoLog):
        return kernel.eta
    grid = np.linspace(0.0, max(lmax, 1e-6), 257)
    vals = kernel.eta(grid)
    interp = PchipInterpolator(grid, vals, extrapolate=False)
    top = float(grid[-1])
    return lambda k: interp(np.clip(k, 0.0, top))


def solve_cumulant(spec: ModelSpec, ops: Operators, g, t: float, dt: float,
                   theta: float = 0.0, phi=None) -> EvolutionTrajectory:
    """Log-Laplace flow u_tau with u_0 = g (+ theta * phi for tilts).

    du/dtau = M u + b zeta2(x, .; u), Dirichlet boundary; CN in M, explicit
    trapezoidal corrector in the nonlinearity.  Returns the full trajectory
    (downstream solvers consume intermediate slices).
    """
    grid = ops.grid
    u = as_field(grid, g)
    if theta != 0.0:
        u = u + theta * np.asarray(phi, dtype=float)
    if np.any(u < 0):
        raise ValueError("initial data of the cumulant flow must be nonnegative")
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    x = grid.nodes
    bw = np.stack([spec.b(x, i) * spec.weight(x, i) for i in range(grid.K)], axis=1)
    P = spec.p(x)
    # kappa never exceeds the running max of u (rows of p are stochastic)
    kmax = 4.0 * max(float(u.max()), 1e-6) + 1.0
    z2 = [_fast_zeta2(spec.kernels[i], kmax) for i in range(grid.K)]

    I = sp.identity(grid.N, format="csc")
    lu = splu((I - 0.5 * dt * ops.M).tocsc())
    Mmat = ops.M

    def nonlin(field):
        kap = np.einsum("mij,mj->mi", P, field)
        out = np.empty_like(field)
        for i in range(grid.K):
            out[:, i] = bw[:, i] * z2[i](kap[:, i])
        return out

    times = np.linspace(0.0, t, n_steps + 1)
    fields = np.empty((n_steps + 1, grid.M, grid.K))
    fields[0] = u
    flat = grid.pack(u)
    for j in range(n_steps):
        half = flat + 0.5 * dt * (Mmat @ flat)
        N0 = grid.pack(nonlin(grid.unpack(flat)))
        pred = lu.solve(half + dt * N0)
        N1 = grid.pack(nonlin(grid.unpack(pred)))
        flat = lu.solve(half + 0.5 * dt * (N0 + N1))
        _check_finite(flat, "cumulant flow", dt)
        fields[j + 1] = grid.unpack(flat)
    return EvolutionTrajectory(times=times, fields=fields, grid=grid)


def laplace_functional(grid: Grid, u_final, mu) -> float:
    """exp(-<u_t, mu>) for the measure mu(dx, di) = mu_field dx di."""
    return float(np.exp(-grid.inner(np.asarray(u_final), np.asarray(mu))))


def solve_linearized(spec: ModelSpec, ops: Operators, sd: SpectralData,
                     u_traj: EvolutionTrajectory, t: float, dt: float) -> EvolutionTrajectory:
    """Tilt derivative v_tau of the cumulant flow, v(0) = phi.

    dv/dtau = M v - b [m - eta(.; pi(u_tau))] (P v); implicit CN in all of M,
    explicit trapezoidal corrector in the eta coupling.
    """
    grid = ops.grid
    x = grid.nodes
    if u_traj.times[-1] < t - 1e-12:
        raise ValueError(
            f"cumulant trajectory covers [0, {u_traj.times[-1]:g}] but the "
            f"linearized flow was asked for horizon t={t:g}")
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    P = spec.p(x)
    bv = np.stack([spec.b(x, i) for i in range(grid.K)], axis=1)
    wgt = np.stack([spec.weight(x, i) for i in range(grid.K)], axis=1)
    mv = np.stack([spec.m(x, i) for i in range(grid.K)], axis=1)
    lmax = 4.0 * max(u_traj.max_abs(), 1e-6) + 1.0
    etas = [_fast_eta(spec.kernels[i], lmax) for i in range(grid.K)]

    def coupling(tau, field):
        u_now = u_traj.at(tau)
        kap = np.einsum("mij,mj->mi", P, u_now)
        pv = np.einsum("mij,mj->mi", P, field)
        out = np.empty_like(field)
        for i in range(grid.K):
            # the spatial weight multiplies the kernel, so eta here is w * eta
            eta_i = wgt[:, i] * etas[i](kap[:, i])
            out[:, i] = -bv[:, i] * (mv[:, i] - eta_i) * pv[:, i]
        return out

    I = sp.identity(grid.N, format="csc")
    lu = splu((I - 0.5 * dt * ops.M).tocsc())
    Mmat = ops.M
    times = np.linspace(0.0, t, n_steps + 1)
    fields = np.empty((n_steps + 1, grid.M, grid.K))
    fields[0] = sd.phi
    flat = sd.phi_flat()
    for j in range(n_steps):
        tau0, tau1 = times[j], times[j + 1]
        half = flat + 0.5 * dt * (Mmat @ flat)
        C0 = grid.pack(coupling(tau0, grid.unpack(flat)))
        pred = lu.solve(half + dt * C0)
        C1 = grid.pack(coupling(tau1, grid.unpack(pred)))
        flat = lu.solve(half + 0.5 * dt * (C0 + C1))
        _check_finite(flat, "linearized flow", dt)
        fields[j + 1] = grid.unpack(flat)
    return EvolutionTrajectory(times=times, fields=fields, grid=grid)


@dataclass
class FKWeightSpec:
    """Weights of a multiplicative path functional.

    ``q(tau)`` returns the (M, K) potential and ``factor(tau)`` the
    (M, K, K) jump factor (entry [m, i, j] applies to a switch i -> j at
    node m); tau is the time-to-horizon argument of the weight.
    """

    q: Callable
    factor: Callable
    label: str = "weights"


def constant_weights(grid: Grid, q0: float, factor0: float) -> FKWeightSpec:
    qf = np.full((grid.M, grid.K), float(q0))
    ff = np.full((grid.M, grid.K, grid.K), float(factor0))
    return FKWeightSpec(q=lambda tau: qf, factor=lambda tau: ff,
                        label=f"const(q={q0}, factor={factor0})")


def theorem1_weights(spec: ModelSpec, grid: Grid, u_traj: EvolutionTrajectory,
                     convention: str | None = None) -> FKWeightSpec:
    """Jump weights of the measure-change identity.

    q = b(n-1); the factor of a switch i -> j at x and time-to-horizon tau is
    eta(x, c; pi(x, c; u_tau))/n(x, c) + ntilde(x, c)/n(x, c), read at the
    convention type c (pre-jump: c = i, post-jump: c = j).
    """
    conv = convention or spec.convention
    if conv not in ("pre", "post"):
        raise ValueError(f"convention must be 'pre' or 'post', got {conv!r}")
    x = grid.nodes
    K = grid.K
    qf = np.stack([spec.b(x, i) * (spec.n(x, i) - 1.0) for i in range(K)], axis=1)
    P = spec.p(x)
    nv = np.stack([spec.n(x, i) for i in range(K)], axis=1)
    ntv = np.stack([spec.ntilde(x, i) for i in range(K)], axis=1)
    lmax = 4.0 * max(u_traj.max_abs(), 1e-6) + 1.0
    etas = [_fast_eta(spec.kernels[i], lmax) for i in range(K)]
    wgt = np.stack([spec.weight(x, i) for i in range(K)], axis=1)

    def factor(tau):
        u_now = u_traj.at(tau)
        kap = np.einsum("mij,mj->mi", P, u_now)
        val = np.empty((grid.M, K))
        for i in range(K):
            val[:, i] = (wgt[:, i] * etas[i](kap[:, i]) + ntv[:, i]) / nv[:, i]
        if conv == "pre":
            return np.repeat(val[:, :, None], K, axis=2)
        return np.repeat(val[:, None, :], K, axis=1)

    return FKWeightSpec(q=lambda tau: qf, factor=factor, label=f"theorem1({conv})")


def nlfk_solve(spec: ModelSpec, ops: Operators, weights: FKWeightSpec, f,
               t: float, dt: float) -> EvolutionTrajectory:
    """Density of the weighted switched-diffusion functional.

    dw_i/dtau = L_i w_i + q w_i + sum_{j != i} q_ij [factor_ij w_j - w_i];
    CN in the diffusion blocks only, everything else explicit trapezoidal
    (a deliberately different splitting from solve_linearized, so agreement
    between the two routes is informative).
    """
    grid = ops.grid
    x = grid.nodes
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    K = grid.K
    P = spec.p(x)
    bn = np.stack([spec.b(x, i) * spec.n(x, i) for i in range(K)], axis=1)
    Qoff = bn[:, :, None] * P            # q_ij for i != j (diag of P is zero)
    qrow = Qoff.sum(axis=2)              # total switch rate per (node, type)

    def rhs_explicit(tau, field):
        fac = np.asarray(weights.factor(tau), dtype=float)
        if np.any((Qoff > 0) & (fac <= 0)):
            raise ValueError(
                f"jump factor of {weights.label!r} is nonpositive at tau={tau:g}; "
                "multiplicative path weights must stay positive")
        out = np.einsum("mij,mj->mi", Qoff * fac, field)
        out -= qrow * field
        out += weights.q(tau) * field
        return out

    I = sp.identity(grid.N, format="csc")
    lu = splu((I - 0.5 * dt * ops.L).tocsc())
    Lmat = ops.L
    times = np.linspace(0.0, t, n_steps + 1)
    fields = np.empty((n_steps + 1, grid.M, K))
    fields[0] = as_field(grid, f)
    flat = grid.pack(fields[0])
    for j in range(n_steps):
        tau0, tau1 = times[j], times[j + 1]
        half = flat + 0.5 * dt * (Lmat @ flat)
        E0 = grid.pack(rhs_explicit(tau0, grid.unpack(flat)))
        pred = lu.solve(half + dt * E0)
        E1 = grid.pack(rhs_explicit(tau1, grid.unpack(pred)))
        flat = lu.solve(half + 0.5 * dt * (E0 + E1))
        _check_finite(flat, "non-local Feynman-Kac flow", dt)
        fields[j + 1] = grid.unpack(flat)
    return EvolutionTrajectory(times=times, fields=fields, grid=grid)


def tilted_laplace(spec: ModelSpec, ops: Operators, sd: SpectralData, g,
                   t: float, dt: float, mu=None) -> dict:
    """Laplace functional of the size-biased process at test field g.

    Returns the plain functional exp(-<u_t, mu>), the tilted value
    e^{-lam1 t} exp(-<u_t, mu>) <v_t, mu>/<phi, mu>, and the ingredients.
    Default mu has density phi, for which <phi, mu> = 1.
    """
    grid = ops.grid
    mu_f = sd.phi if mu is None else as_field(grid, mu)
    u_traj = solve_cumulant(spec, ops, g, t, dt)
    v_traj = solve_linearized(spec, ops, sd, u_traj, t, dt)
    plain = laplace_functional(grid, u_traj.final, mu_f)
    phi_mass = grid.inner(sd.phi, mu_f)
    v_mass = grid.inner(v_traj.final, mu_f)
    value = float(np.exp(-sd.lam1 * t) * plain * v_mass / phi_mass)
    return {"value": value, "plain": plain, "u_traj": u_traj, "v_traj": v_traj,
            "phi_mass": phi_mass, "v_mass": v_mass}


def theorem1_check(spec: ModelSpec, ops: Operators, sd: SpectralData, g,
                   t: float, dt: float, mu=None) -> dict:
    """Deterministic verification of the measure-change identity.

    lhs: tilted Laplace functional from the linearized-cumulant route;
    rhs: plain Laplace functional times the spine jump-weight expectation
    from the non-local Feynman-Kac route, for both jump-time conventions.
    """
    grid = ops.grid
    mu_f = sd.phi if mu is None else as_field(grid, mu)
    parts = tilted_laplace(spec, ops, sd, g, t, dt, mu=mu_f)
    phi_mass = parts["phi_mass"]
    out = {"lhs": parts["value"], "plain": parts["plain"], "t": t, "dt": dt}
    for conv in ("pre", "post"):
        wspec = theorem1_weights(spec, grid, parts["u_traj"], convention=conv)
        w_traj = nlfk_solve(spec, ops, wspec, sd.phi, t, dt)
        spine_factor = float(np.exp(-sd.lam1 * t)
                             * grid.inner(w_traj.final, mu_f) / phi_mass)
        rhs = parts["plain"] * spine_factor
        out[conv] = {"rhs": rhs, "spine_factor": spine_factor,
                     "residual": abs(parts["value"] - rhs)}
    out["consistent_convention"] = ("pre" if out["pre"]["residual"] <= out["post"]["residual"]
                                    else "post")
    return out


def spine_laplace(spec: ModelSpec, ops: Operators, sd: SpectralData,
                  pt: PhiTransform, g, t: float, dt: float,
                  convention: str | None = None,
                  u_traj: EvolutionTrajectory | None = None) -> float:
    """Expected product of the mark Laplace factors along the spine.

    Under the stationary start (spine law with initial density phi^2) this
    equals the ratio tilted/plain of the Laplace functionals; computed here
    on the phi-transformed generator with jump factors
    int e^{-r pi(x,c;u_tau)} Ftilde(x,c;dr), c the convention type.
    """
    grid = ops.grid
    conv = convention or spec.convention
    x = grid.nodes
    K = grid.K
    if u_traj is None:
        u_traj = solve_cumulant(spec, ops, g, t, dt)
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    P = spec.p(x)
    nv = np.stack([spec.n(x, i) for i in range(K)], axis=1)
    ntv = np.stack([spec.ntilde(x, i) for i in range(K)], axis=1)
    wgt = np.stack([spec.weight(x, i) for i in range(K)], axis=1)
    lmax = 4.0 * max(u_traj.max_abs(), 1e-6) + 1.0
    etas = [_fast_eta(spec.kernels[i], lmax) for i in range(K)]
    G_T = (pt.G - pt.G_L).tocsr()
    rate = pt.rate_matrix

    def extra(tau, field):
        u_now = u_traj.at(tau)
        kap = np.einsum("mij,mj->mi", P, u_now)
        val = np.empty((grid.M, K))
        for i in range(K):
            val[:, i] = (wgt[:, i] * etas[i](kap[:, i]) + ntv[:, i]) / nv[:, i]
        fac = (np.repeat(val[:, :, None], K, axis=2) if conv == "pre"
               else np.repeat(val[:, None, :], K, axis=1))
        return np.einsum("mij,mj->mi", rate * (fac - 1.0), field)

    I = sp.identity(grid.N, format="csc")
    lu = splu((I - 0.5 * dt * pt.G_L).tocsc())
    times = np.linspace(0.0, t, n_steps + 1)
    flat = np.ones(grid.N)
    for j in range(n_steps):
        tau0, tau1 = times[j], times[j + 1]
        half = flat + 0.5 * dt * (pt.G_L @ flat)
        E0 = G_T @ flat + grid.pack(extra(tau0, grid.unpack(flat)))
        pred = lu.solve(half + dt * E0)
        E1 = G_T @ pred + grid.pack(extra(tau1, grid.unpack(pred)))
        flat = lu.solve(half + 0.5 * dt * (E0 + E1))
        _check_finite(flat, "spine Laplace flow", dt)
    return float(grid.inner(grid.unpack(flat), pt.invariant_density))
