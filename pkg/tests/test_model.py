"""Model layer: coefficient fields, branching functionals, validation."""

import math

import numpy as np
import pytest

from spinelab import (CoefficientFields, Interval, ModelSpec, PointMass,
                      ValidationError)


def const(v):
    return lambda x: np.full(np.asarray(x, dtype=float).shape, float(v))


def p_const(rows):
    rows = np.asarray(rows, dtype=float)

    def p(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(rows, (x.size,) + rows.shape).copy()

    return p


def make_spec(b=(1.0, 1.0), n=(3.0, 3.0), a=(1.0, 1.0), p=None, kernels=None,
              K=2, convention="pre"):
    p = [[0.0, 1.0], [1.0, 0.0]] if p is None else p
    kernels = kernels or tuple(PointMass(1.0) for _ in range(K))
    fields = CoefficientFields(K=K, a=tuple(const(v) for v in a),
                               b=tuple(const(v) for v in b),
                               n=tuple(const(v) for v in n), p=p_const(p))
    return ModelSpec(domain=Interval(0.0, math.pi), K=K, coeffs=fields,
                     kernels=kernels, convention=convention)


XS = np.array([0.5, 1.2, 2.8])


class TestInterval:
    def test_basic_geometry(self):
        iv = Interval(0.0, math.pi)
        assert iv.length == math.pi
        assert iv.contains(np.array([0.1, 3.0])).all()
        assert not iv.contains(np.array([0.0, math.pi, -1.0])).any()
        np.testing.assert_allclose(iv.dist_to_boundary([0.3, 3.0]),
                                   [0.3, math.pi - 3.0])

    def test_rejects_bad_bounds(self):
        with pytest.raises(ValidationError):
            Interval(1.0, 1.0)
        with pytest.raises(ValidationError):
            Interval(0.0, np.inf)


class TestCoefficientFields:
    def test_default_weight_is_one(self):
        spec = make_spec()
        np.testing.assert_array_equal(spec.weight(XS, 0), np.ones(3))

    def test_default_a_prime_is_derivative_of_a(self):
        a0 = lambda x: 1.0 + 0.2 * np.sin(x)
        fields = CoefficientFields(K=2, a=(a0, const(1.0)),
                                   b=(const(1.0),) * 2, n=(const(3.0),) * 2,
                                   p=p_const([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(fields.a_prime[0](XS), 0.2 * np.cos(XS),
                                   atol=1e-8)
        np.testing.assert_allclose(fields.a_prime[1](XS), 0.0, atol=1e-12)

    def test_wrong_arity_rejected(self):
        with pytest.raises(ValidationError):
            CoefficientFields(K=2, a=(const(1.0),), b=(const(1.0),) * 2,
                              n=(const(3.0),) * 2,
                              p=p_const([[0.0, 1.0], [1.0, 0.0]]))


class TestFields:
    def test_mass_mean_and_ntilde(self):
        spec = make_spec(kernels=(PointMass(1.0), PointMass(2.0)))
        np.testing.assert_allclose(spec.m(XS, 0), 1.0)
        np.testing.assert_allclose(spec.m(XS, 1), 2.0)
        np.testing.assert_allclose(spec.ntilde(XS, 0), 2.0)
        np.testing.assert_allclose(spec.ntilde(XS, 1), 1.0)
        np.testing.assert_allclose(spec.lambda_F(XS, 0), 1.0)

    def test_pi_f_swaps_types_for_the_two_type_swap(self):
        spec = make_spec()
        f = np.stack([XS, 2.0 * XS], axis=1)
        np.testing.assert_allclose(spec.pi_f(XS, 0, f), 2.0 * XS)
        np.testing.assert_allclose(spec.pi_f(XS, 1, f), XS)

    def test_pi_f_rejects_wrong_shape(self):
        spec = make_spec()
        with pytest.raises(ValidationError):
            spec.pi_f(XS, 0, np.ones((3, 3)))

    def test_zeta_splits_and_zeta2_sign(self):
        spec = make_spec()
        f = np.stack([0.3 + 0.0 * XS, 0.7 + 0.0 * XS], axis=1)
        z = spec.zeta(XS, 0, f)
        z1 = spec.zeta1(XS, 0, f)
        z2 = spec.zeta2(XS, 0, f)
        np.testing.assert_allclose(z, z1 + z2)
        assert np.all(z2 <= 0)
        # unit point mass: zeta2(kap) = (1 - e^-kap) - kap at kap = pi(f) = 0.7
        np.testing.assert_allclose(z2, (1.0 - math.exp(-0.7)) - 0.7)

    def test_psi_equals_mean_flow_plus_motionless_part(self):
        spec = make_spec(b=(1.3, 1.3))
        f = np.stack([0.2 + 0.1 * XS, 0.5 - 0.05 * XS], axis=1)
        for i in (0, 1):
            lhs = spec.psi(XS, i, f)
            rhs = (spec.psi_hat(XS, i, f)
                   + spec.b(XS, i) * spec.n(XS, i)
                   * (f[:, i] - spec.pi_f(XS, i, f)))
            np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_eta_boundary_values(self):
        spec = make_spec(kernels=(PointMass(2.0), PointMass(1.0)))
        np.testing.assert_allclose(spec.eta(XS, 0, 0.0), spec.m(XS, 0))
        vals = [spec.eta(XS, 0, lam)[0] for lam in (0.0, 0.5, 1.0, 2.0)]
        assert np.all(np.diff(vals) < 0)

    def test_l_field_unit_point_mass_closed_form(self):
        spec = make_spec()
        for kap in (0.5, 1.0, 3.0):
            want = kap * math.log(kap) if kap > 1 else 0.0
            np.testing.assert_allclose(spec.l_field(XS, 0, kap), want)


class TestFtilde:
    def test_zero_weight_and_laplace_endpoints(self):
        spec = make_spec()
        np.testing.assert_allclose(spec.ftilde_zero_weight(XS, 0), 2.0 / 3.0)
        np.testing.assert_allclose(spec.ftilde_laplace(XS, 0, 0.0), 1.0)
        np.testing.assert_allclose(spec.ftilde_laplace(XS, 0, 50.0), 2.0 / 3.0,
                                   atol=1e-12)

    def test_ftilde_mean(self):
        spec = make_spec(kernels=(PointMass(2.0), PointMass(1.0)), n=(3.0, 3.0))
        np.testing.assert_allclose(spec.ftilde_mean(XS, 0), 4.0 / 3.0)

    def test_ftilde_sample_statistics(self):
        spec = make_spec()
        r = np.random.default_rng(5)
        x = np.full(20_000, 1.0)
        marks = spec.ftilde_sample(x, 0, r)
        zero_frac = float(np.mean(marks == 0.0))
        # atom at zero has weight ntilde/n = 2/3
        assert abs(zero_frac - 2.0 / 3.0) < 4 * math.sqrt(2.0 / 9.0 / x.size)
        nz = marks[marks > 0]
        np.testing.assert_array_equal(nz, 1.0)   # size-biased point mass at u0


class TestMatrixFields:
    def test_br_equals_q_plus_bn(self):
        spec = make_spec(b=(1.0, 2.0), n=(4.0, 2.0))
        mats = spec.matrix_fields(XS)
        np.testing.assert_allclose(mats["BR"], mats["Q"] + mats["BN"],
                                   rtol=1e-14)
        np.testing.assert_allclose(mats["Q"].sum(axis=2), 0.0, atol=1e-12)
        np.testing.assert_allclose(
            mats["R"][:, 0, 1], spec.n(XS, 0) * spec.p(XS)[:, 0, 1])


class TestValidation:
    def test_valid_spec_passes(self):
        assert make_spec().require_valid() is not None
        # b n p symmetric with unequal b is fine when n compensates
        make_spec(b=(1.0, 2.0), n=(4.0, 2.0)).validate()

    def test_rejects_single_type(self):
        with pytest.raises(ValidationError, match="two types"):
            make_spec(K=1, b=(1.0,), n=(3.0,), a=(1.0,), p=[[0.0]],
                      kernels=(PointMass(1.0),))

    def test_rejects_wrong_kernel_count(self):
        with pytest.raises(ValidationError, match="kernel"):
            make_spec(kernels=(PointMass(1.0),))

    def test_rejects_bad_convention(self):
        with pytest.raises(ValidationError, match="convention"):
            make_spec(convention="mid")

    def test_rejects_nonpositive_a(self):
        with pytest.raises(ValidationError, match="positive"):
            make_spec(a=(1.0, -0.5)).validate()

    def test_rejects_mean_above_n(self):
        with pytest.raises(ValidationError, match="n >= m"):
            make_spec(n=(0.5, 0.5), kernels=(PointMass(2.0), PointMass(2.0))).validate()

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValidationError, match="diagonal"):
            make_spec(p=[[0.5, 0.5], [1.0, 0.0]]).validate()

    def test_rejects_bad_row_sums(self):
        with pytest.raises(ValidationError, match="sum to 1"):
            make_spec(p=[[0.0, 0.9], [1.0, 0.0]]).validate()

    def test_rejects_asymmetric_coupling(self):
        with pytest.raises(ValidationError, match="symmetric"):
            make_spec(b=(1.0, 2.0)).validate()

    def test_rejects_reducible_type_graph(self):
        # b n p is symmetric (type 2 fully decoupled) yet not irreducible
        p = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]
        with pytest.raises(ValidationError, match="reducible"):
            make_spec(K=3, b=(1.0, 1.0, 0.0), n=(1.0, 1.0, 1.0),
                      a=(1.0, 1.0, 1.0), p=p,
                      kernels=(PointMass(0.5),) * 3).validate()

    def test_error_messages_carry_position(self):
        try:
            make_spec(p=[[0.0, 0.9], [1.0, 0.0]]).validate()
        except ValidationError as exc:
            assert "row 0" in str(exc) and "x=" in str(exc)
        else:
            pytest.fail("expected a validation error")
