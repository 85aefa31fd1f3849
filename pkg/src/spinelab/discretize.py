"""Uniform-grid discretization of the interval with absorbing boundary.

Interior nodes x_m = lo + (m+1) h, m = 0..M-1, h = (hi - lo)/(M+1); the
boundary nodes are omitted, which encodes the Dirichlet condition.  Fields
live as (M, K) arrays; the flat ordering stacks types in blocks,
flat[k*M + m] = field[m, k].

The divergence-form generator L_k u = (a^(k) u')' uses face diffusivities
averaged from the adjacent node values, a_{m+1/2} = (a_m + a_{m+1})/2, which
makes every L_k block exactly symmetric.  With the quadrature weights w_m = h
the type coupling diag(b)(R - I) is plain-symmetric whenever b n p is,
so the mean operator below is a real symmetric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import ModelSpec, Interval

__all__ = ["Grid", "build_grid", "Operators", "build_operators"]


@dataclass(frozen=True)
class Grid:
    domain: Interval
    M: int
    K: int

    @property
    def h(self) -> float:
        return self.domain.length / (self.M + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.domain.lo + self.h * np.arange(1, self.M + 1)

    @property
    def N(self) -> int:
        return self.M * self.K

    def pack(self, field) -> np.ndarray:
        """(M, K) field -> flat (N,) vector with type-major blocks."""
        field = np.asarray(field, dtype=float)
        if field.shape != (self.M, self.K):
            raise ValueError(f"expected shape {(self.M, self.K)}, got {field.shape}")
        return field.T.ravel().copy()

    def unpack(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.N,):
            raise ValueError(f"expected shape {(self.N,)}, got {flat.shape}")
        return flat.reshape(self.K, self.M).T.copy()

    def quad(self, field) -> float:
        """int_D sum_i field(x, i) dx with weights w_m = h."""
        return float(self.h * np.sum(np.asarray(field)))

    def inner(self, f, g) -> float:
        return float(self.h * np.sum(np.asarray(f) * np.asarray(g)))

    def evaluate(self, fun) -> np.ndarray:
        """Sample a callable (x, i) -> values into an (M, K) field."""
        x = self.nodes
        return np.stack([np.broadcast_to(np.asarray(fun(x, i), dtype=float), x.shape)
                         for i in range(self.K)], axis=1)


def build_grid(domain: Interval, m_nodes: int, K: int) -> Grid:
    if m_nodes < 3:
        raise ValueError(f"need at least 3 interior nodes, got {m_nodes}")
    return Grid(domain=domain, M=m_nodes, K=K)


@dataclass(frozen=True)
class Operators:
    """Sparse operators on the flat grid space.

    L     block-diagonal divergence-form diffusion, Dirichlet;
    A     L + Q, generator of the switched diffusion killed at the boundary;
    M     L + diag(b)(R - I), generator of the mean semigroup;
    Q     switch coupling alone (zero row sums);
    BR    diag(b)(R - I) coupling alone;
    bn1   flat diagonal of b(n - 1), so M = A + diag(bn1).
    """

    grid: Grid
    L: sp.csr_matrix
    A: sp.csr_matrix
    M: sp.csr_matrix
    Q: sp.csr_matrix
    BR: sp.csr_matrix
    bn1: np.ndarray


def _lap_block(spec: ModelSpec, grid: Grid, k: int) -> sp.csr_matrix:
    x = grid.nodes
    h = grid.h
    a_node = spec.a(x, k)
    a_lo = spec.a(np.array([grid.domain.lo]), k)[0]
    a_hi = spec.a(np.array([grid.domain.hi]), k)[0]
    # face values between consecutive nodes, plus the two boundary faces
    a_face = np.empty(grid.M + 1)
    a_face[1:-1] = 0.5 * (a_node[:-1] + a_node[1:])
    a_face[0] = 0.5 * (a_lo + a_node[0])
    a_face[-1] = 0.5 * (a_node[-1] + a_hi)
    main = -(a_face[:-1] + a_face[1:]) / h ** 2
    off = a_face[1:-1] / h ** 2
    return sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr")


def _coupling(grid: Grid, C: np.ndarray) -> sp.csr_matrix:
    """Assemble the nodewise type-coupling matrices C[m] into flat space."""
    M, K = grid.M, grid.K
    rows, cols, vals = [], [], []
    idx = np.arange(M)
    for i in range(K):
        for j in range(K):
            v = C[:, i, j]
            if not np.any(v):
                continue
            rows.append(i * M + idx)
            cols.append(j * M + idx)
            vals.append(v)
    if not rows:
        return sp.csr_matrix((grid.N, grid.N))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.N, grid.N))


def build_operators(spec: ModelSpec, grid: Grid) -> Operators:
    x = grid.nodes
    mats = spec.matrix_fields(x)
    L = sp.block_diag([_lap_block(spec, grid, k) for k in range(grid.K)], format="csr")
    Q = _coupling(grid, mats["Q"])
    BR = _coupling(grid, mats["BR"])
    bn1_field = np.stack(
        [spec.b(x, i) * (spec.n(x, i) - 1.0) for i in range(grid.K)], axis=1)
    return Operators(grid=grid, L=L, A=(L + Q).tocsr(), M=(L + BR).tocsr(),
                     Q=Q, BR=BR, bn1=grid.pack(bn1_field))
