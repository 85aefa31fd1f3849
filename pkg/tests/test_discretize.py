"""Grid layout, quadrature exactness, and operator structure."""

import math

import numpy as np
import pytest

from spinelab import Interval, build_grid, build_operators, load_scenario


@pytest.fixture(scope="module")
def small():
    spec, _, _ = load_scenario("canon2")
    grid = build_grid(spec.domain, 40, spec.K)
    return spec, grid, build_operators(spec, grid)


class TestGrid:
    def test_nodes_are_interior_and_uniform(self):
        g = build_grid(Interval(0.0, math.pi), 7, 2)
        assert g.h == pytest.approx(math.pi / 8)
        assert g.nodes[0] == pytest.approx(g.h)
        assert g.nodes[-1] == pytest.approx(math.pi - g.h)
        assert np.allclose(np.diff(g.nodes), g.h)
        assert g.N == 14

    def test_min_size_enforced(self):
        with pytest.raises(ValueError):
            build_grid(Interval(0.0, 1.0), 2, 2)

    def test_pack_unpack_roundtrip_and_order(self):
        g = build_grid(Interval(0.0, 1.0), 5, 3)
        field = np.arange(15, dtype=float).reshape(5, 3)
        flat = g.pack(field)
        # type-major blocks: flat[k*M + m] = field[m, k]
        assert flat[0] == field[0, 0]
        assert flat[5] == field[0, 1]
        assert flat[12] == field[2, 2]
        np.testing.assert_array_equal(g.unpack(flat), field)

    def test_pack_rejects_wrong_shape(self):
        g = build_grid(Interval(0.0, 1.0), 5, 2)
        with pytest.raises(ValueError):
            g.pack(np.ones((2, 5)))
        with pytest.raises(ValueError):
            g.unpack(np.ones(11))

    def test_quadrature_is_exact_for_sine_squares(self):
        # sum_m sin^2(k x_m) = (M+1)/2 exactly on the uniform interior grid
        g = build_grid(Interval(0.0, math.pi), 33, 2)
        for k in (1, 2, 5):
            f = np.stack([np.sin(k * g.nodes)] * 2, axis=1)
            assert g.inner(f[:, :1], f[:, :1]) == pytest.approx(math.pi / 2,
                                                                rel=1e-14)
        assert g.quad(np.ones((33, 2))) == pytest.approx(2 * 33 * g.h)

    def test_evaluate_broadcasts_scalars(self):
        g = build_grid(Interval(0.0, 1.0), 4, 2)
        field = g.evaluate(lambda x, i: float(i))
        np.testing.assert_array_equal(field[:, 0], 0.0)
        np.testing.assert_array_equal(field[:, 1], 1.0)


class TestOperators:
    def test_discrete_dirichlet_eigenvectors_are_exact(self, small):
        # constant a: L sin(k x) = -(4 a / h^2) sin^2(k h / 2) sin(k x)
        spec, grid, ops = small
        for k in (1, 2, 3):
            v = grid.pack(np.stack([np.sin(k * grid.nodes)] * 2, axis=1))
            mu = -4.0 / grid.h ** 2 * math.sin(k * grid.h / 2.0) ** 2
            resid = ops.L @ v - mu * v
            assert np.max(np.abs(resid)) < 1e-10

    def test_symmetry(self, small):
        _, _, ops = small
        for name in ("L", "M", "A", "Q", "BR"):
            mat = getattr(ops, name)
            assert abs(mat - mat.T).max() < 1e-12, name

    def test_symmetry_with_variable_coefficients(self):
        spec, _, _ = load_scenario("canonv")
        grid = build_grid(spec.domain, 50, spec.K)
        ops = build_operators(spec, grid)
        assert abs(ops.L - ops.L.T).max() < 1e-12
        assert abs(ops.M - ops.M.T).max() < 1e-12

    def test_operator_identities(self, small):
        spec, grid, ops = small
        assert abs(ops.A - (ops.L + ops.Q)).max() < 1e-14
        assert abs(ops.M - (ops.L + ops.BR)).max() < 1e-14
        import scipy.sparse as sp
        assert abs(ops.M - (ops.A + sp.diags(ops.bn1))).max() < 1e-12

    def test_q_rows_sum_to_zero(self, small):
        _, grid, ops = small
        rows = np.asarray(ops.Q.sum(axis=1)).ravel()
        assert np.max(np.abs(rows)) < 1e-12

    def test_bn1_field_matches_coefficients(self, small):
        spec, grid, ops = small
        want = np.stack([spec.b(grid.nodes, i) * (spec.n(grid.nodes, i) - 1.0)
                         for i in range(grid.K)], axis=1)
        np.testing.assert_allclose(grid.unpack(ops.bn1), want)
