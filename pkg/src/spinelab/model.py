"""Model specification for multitype superdiffusions with non-local branching.

A model on the interval D = (lo, hi) with K particle types consists of

* per-type diffusivities a^(k)(x) > 0 entering the divergence-form generator
  L_k u = (a^(k) u')',
* a branching rate b(x,i) >= 0 and offspring intensity n(x,i),
* a type-assignment matrix p(x) with p^(i)_i = 0 and unit row sums, giving
  the non-local average pi(x,i;f) = sum_j p^(i)_j(x) f_j(x),
* per-type offspring-mass kernels F(x,i;du) = s(x,i) * F_i(du) with a bounded
  spatial weight s (default 1) and mean m(x,i) <= n(x,i).

The branching mechanism splits as

    psi(x,i;f)  = b * (f_i - zeta),        zeta = zeta1 + zeta2,
    zeta1       = n * pi(f),
    zeta2       = int (1 - e^{-u pi(f)} - u pi(f)) F(du)  <= 0,

or equivalently zeta = ntilde * pi(f) + int (1 - e^{-u pi(f)}) F(du) with
ntilde = n - m.  The mean-flow form is psi_hat = -b n f_i + b (f_i - zeta2),
so psi = psi_hat + b n (f_i - pi(f)).

Well-posedness of the symmetric spectral theory requires
b(x,i) n(x,i) p^(i)_j(x) to be symmetric in (i, j) and the type-coupling
matrix to be irreducible; ``ModelSpec.validate`` enforces both.

Fields of one spatial argument are vectorized callables; everything here
accepts 1-d arrays of positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import EtaTable

__all__ = [
    "ValidationError",
    "Interval",
    "CoefficientFields",
    "ModelSpec",
]


class ValidationError(ValueError):
    """A model or scenario violates a structural requirement."""


@dataclass(frozen=True)
class Interval:
    """Bounded spatial domain (lo, hi) with absorbing boundary."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValidationError(f"need finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x > self.lo) & (x < self.hi)

    def dist_to_boundary(self, x):
        x = np.asarray(x, dtype=float)
        return np.minimum(x - self.lo, self.hi - x)


_FD_STEP = 1e-6


@dataclass(frozen=True)
class CoefficientFields:
    """Vectorized coefficient callables.

    ``a``, ``b``, ``n``, ``weight`` are sequences of K callables (one per
    type) mapping a position array to an array; ``p`` maps a position array
    of shape (M,) to the stacked type matrix of shape (M, K, K).
    ``a_prime`` defaults to a centered finite difference of ``a``.
    """

    K: int
    a: Sequence[Callable]
    b: Sequence[Callable]
    n: Sequence[Callable]
    p: Callable
    weight: Sequence[Callable] = None
    a_prime: Sequence[Callable] = None

    def __post_init__(self):
        if self.weight is None:
            object.__setattr__(
                self, "weight", tuple(lambda x: np.ones_like(np.asarray(x, dtype=float))
                                      for _ in range(self.K)))
        if self.a_prime is None:
            def make(ak):
                def ap(x):
                    x = np.asarray(x, dtype=float)
                    return (ak(x + _FD_STEP) - ak(x - _FD_STEP)) / (2.0 * _FD_STEP)
                return ap
            object.__setattr__(self, "a_prime", tuple(make(ak) for ak in self.a))
        for name in ("a", "b", "n", "weight", "a_prime"):
            if len(getattr(self, name)) != self.K:
                raise ValidationError(f"coefficient {name!r} needs one entry per type")


def _as_field(f, x):
    """Evaluate callable-or-array field values at x for all K types."""
    return np.asarray(f(x) if callable(f) else f, dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    """Complete model: domain, coefficients, kernels, jump-time convention."""

    domain: Interval
    K: int
    coeffs: CoefficientFields
    kernels: tuple
    convention: str = "pre"
    name: str = "model"

    def __post_init__(self):
        if self.K < 2:
            raise ValidationError(f"need at least two types, got K={self.K}")
        if len(self.kernels) != self.K:
            raise ValidationError("need one offspring kernel per type")
        if self.convention not in ("pre", "post"):
            raise ValidationError(f"convention must be 'pre' or 'post', got {self.convention!r}")

    # -- elementary fields -------------------------------------------------

    def b(self, x, i: int):
        return np.asarray(self.coeffs.b[i](np.asarray(x, dtype=float)), dtype=float)

    def n(self, x, i: int):
        return np.asarray(self.coeffs.n[i](np.asarray(x, dtype=float)), dtype=float)

    def a(self, x, k: int):
        return np.asarray(self.coeffs.a[k](np.asarray(x, dtype=float)), dtype=float)

    def a_prime(self, x, k: int):
        return np.asarray(self.coeffs.a_prime[k](np.asarray(x, dtype=float)), dtype=float)

    def weight(self, x, i: int):
        return np.asarray(self.coeffs.weight[i](np.asarray(x, dtype=float)), dtype=float)

    def p(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        P = np.asarray(self.coeffs.p(x), dtype=float)
        if P.shape != (x.size, self.K, self.K):
            raise ValidationError(f"p(x) must have shape (len(x), K, K), got {P.shape}")
        return P

    def m(self, x, i: int):
        """Kernel mean m(x,i) = int u F(x,i;du)."""
        return self.weight(x, i) * self.kernels[i].mean()

    def lambda_F(self, x, i: int):
        return self.weight(x, i) * self.kernels[i].total_mass()

    def ntilde(self, x, i: int):
        return self.n(x, i) - self.m(x, i)

    # -- branching functionals ---------------------------------------------

    def pi_f(self, x, i: int, f):
        """pi(x,i;f) = sum_j p^(i)_j(x) f_j(x); f has shape (len(x), K)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        fv = _as_field(f, x)
        if fv.shape != (x.size, self.K):
            raise ValidationError(f"field must have shape (len(x), K), got {fv.shape}")
        return np.einsum("mj,mj->m", self.p(x)[:, i, :], fv)

    def zeta1(self, x, i: int, f):
        return self.n(x, i) * self.pi_f(x, i, f)

    def zeta2(self, x, i: int, f):
        kap = self.pi_f(x, i, f)
        return self.weight(x, i) * self.kernels[i].zeta2(kap)

    def zeta(self, x, i: int, f):
        return self.zeta1(x, i, f) + self.zeta2(x, i, f)

    def psi(self, x, i: int, f):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        fv = _as_field(f, x)
        return self.b(x, i) * (fv[:, i] - self.zeta(x, i, f))

    def psi_hat(self, x, i: int, f):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        fv = _as_field(f, x)
        b = self.b(x, i)
        return -b * self.n(x, i) * fv[:, i] + b * (fv[:, i] - self.zeta2(x, i, f))

    def eta(self, x, i: int, lam):
        """eta(x,i;lam) = int e^{-u lam} u F(x,i;du); eta(0) = m(x,i)."""
        return self.weight(x, i) * self.kernels[i].eta(lam)

    def eta_table(self, i: int, lam_max: float, n: int = 257) -> EtaTable:
        """Fast eta evaluator for solver inner loops (spatial weight excluded)."""
        return EtaTable(self.kernels[i], lam_max, n)

    # -- size-biased mark law F-tilde ----------------------------------------

    def ftilde_zero_weight(self, x, i: int):
        """Weight of the atom at 0: ntilde / n."""
        return self.ntilde(x, i) / self.n(x, i)

    def ftilde_laplace(self, x, i: int, lam):
        """int e^{-lam r} Ftilde(x,i;dr) = eta(lam)/n + ntilde/n."""
        return (self.eta(x, i, lam) + self.ntilde(x, i)) / self.n(x, i)

    def ftilde_mean(self, x, i: int):
        """Mean of Ftilde: second moment of F over n (may be inf)."""
        return self.weight(x, i) * self.kernels[i].second_moment() / self.n(x, i)

    def ftilde_sample(self, x, i: int, rng: np.random.Generator):
        """One mark per entry of x, drawn from Ftilde(x,i;dr).

        With probability ntilde/n the mark is 0, otherwise it follows the
        size-biased law u F(du) / m.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        marks = np.zeros(x.size)
        nonzero = rng.random(x.size) >= self.ftilde_zero_weight(x, i)
        cnt = int(np.count_nonzero(nonzero))
        if cnt:
            marks[nonzero] = self.kernels[i].sample_sizebiased(rng, cnt)
        return marks

    # -- L log L integrand ---------------------------------------------------

    def l_field(self, x, i: int, kappa):
        """l(x,i) = int (r kap) log+ (r kap) F(x,i;dr); may be inf."""
        return self.weight(x, i) * self.kernels[i].l_value(kappa)

    def l_field_truncated(self, x, i: int, kappa, cutoff: float):
        return self.weight(x, i) * self.kernels[i].l_truncated(kappa, cutoff)

    # -- matrix fields -------------------------------------------------------

    def matrix_fields(self, x):
        """Type-coupling matrices at each position.

        Returns a dict with stacked (len(x), K, K) arrays:
          R       = diag(n) p                (offspring intensity matrix),
          Q       = diag(b n)(p - I)         (switch generator; zero row sums),
          BR      = diag(b)(R - I),
          BN      = diag(b (n - 1)) as a diagonal matrix field,
        satisfying BR = Q + BN exactly.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        M = x.size
        P = self.p(x)
        I = np.eye(self.K)[None, :, :]
        bv = np.stack([self.b(x, i) for i in range(self.K)], axis=1)
        nv = np.stack([self.n(x, i) for i in range(self.K)], axis=1)
        R = nv[:, :, None] * P
        Q = (bv * nv)[:, :, None] * (P - I)
        BR = bv[:, :, None] * (R - I)
        BN = (bv * (nv - 1.0))[:, :, None] * np.broadcast_to(I, (M, self.K, self.K))
        return {"R": R, "Q": Q, "BR": BR, "BN": BN}

    # -- validation ----------------------------------------------------------

    def validate(self, n_sample: int = 101, tol: float = 1e-10):
        """Check structural requirements on a sample of interior points.

        Raises ValidationError naming the offending coefficient, type pair
        and sample position.  Checks: positivity and boundedness of a;
        nonnegativity of b and of ntilde = n - m; p has zero diagonal,
        nonnegative entries and unit row sums; b n p is symmetric across
        types; the type graph of Q is irreducible.
        """
        xs = np.linspace(self.domain.lo, self.domain.hi, n_sample + 2)[1:-1]
        K = self.K
        for k in range(K):
            av = self.a(xs, k)
            if np.any(~np.isfinite(av)) or np.any(av <= 0):
                j = int(np.argmin(av))
                raise ValidationError(f"a(x,{k}) must be positive; a({xs[j]:.6g})={av[j]:.6g}")
        for i in range(K):
            bv = self.b(xs, i)
            if np.any(~np.isfinite(bv)) or np.any(bv < 0):
                j = int(np.argmin(bv))
                raise ValidationError(f"b(x,{i}) must be nonnegative; b({xs[j]:.6g})={bv[j]:.6g}")
            nt = self.ntilde(xs, i)
            if np.any(~np.isfinite(nt)) or np.any(nt < -tol):
                j = int(np.argmin(nt))
                raise ValidationError(
                    f"need n >= m (kernel mean) for type {i}; "
                    f"n-m at x={xs[j]:.6g} is {nt[j]:.6g}")
        P = self.p(xs)
        if np.any(np.abs(np.einsum("mii->mi", P)) > tol):
            m_idx, i_idx = np.unravel_index(
                np.argmax(np.abs(np.einsum("mii->mi", P))), (xs.size, K))
            raise ValidationError(
                f"p must have zero diagonal; p^({i_idx})_{i_idx}({xs[m_idx]:.6g}) != 0")
        if np.any(P < -tol):
            raise ValidationError("p must be entrywise nonnegative")
        rows = P.sum(axis=2)
        if np.any(np.abs(rows - 1.0) > 1e-8):
            m_idx, i_idx = np.unravel_index(np.argmax(np.abs(rows - 1.0)), rows.shape)
            raise ValidationError(
                f"rows of p must sum to 1; row {i_idx} at x={xs[m_idx]:.6g} "
                f"sums to {rows[m_idx, i_idx]:.12g}")
        bn = np.stack([self.b(xs, i) * self.n(xs, i) for i in range(K)], axis=1)
        C = bn[:, :, None] * P
        asym = np.abs(C - np.swapaxes(C, 1, 2))
        if np.any(asym > tol * (1.0 + np.abs(C).max())):
            m_idx, i_idx, j_idx = np.unravel_index(np.argmax(asym), asym.shape)
            raise ValidationError(
                "b n p must be symmetric across types: "
                f"(i,j)=({i_idx},{j_idx}) at x={xs[m_idx]:.6g}: "
                f"{C[m_idx, i_idx, j_idx]:.12g} vs {C[m_idx, j_idx, i_idx]:.12g}")
        # irreducibility of the type graph: edge i->j iff b n p_ij > 0 somewhere
        adj = (C > tol).any(axis=0)
        if not _strongly_connected(adj):
            raise ValidationError("type-switch matrix Q is reducible")

    def require_valid(self):
        self.validate()
        return self


def _strongly_connected(adj: np.ndarray) -> bool:
    K = adj.shape[0]

    def reach(A):
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in range(K):
                if A[i, j] and j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == K

    return reach(adj) and reach(adj.T)
