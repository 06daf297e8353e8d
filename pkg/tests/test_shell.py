import numpy as np
import pytest
from scipy.linalg import eigh

from periodic_fsi.errors import DimensionMismatch, NotCoercive
from periodic_fsi.quadrature import composite, tensor2
from periodic_fsi.shell import (
    BeamModes,
    KoiterOperator,
    ShellBasis,
    beam_eigenvalues,
    bending_coefficient,
)


class TestBeamModes:
    def test_first_eigenvalue(self):
        assert beam_eigenvalues(1)[0] == pytest.approx(4.73004074, abs=1e-8)

    def test_characteristic_equation(self):
        lam = beam_eigenvalues(6)
        # cosh(lam) cos(lam) = 1 in the form that stays well conditioned
        np.testing.assert_allclose(np.cos(lam) - 1.0 / np.cosh(lam), 0.0, atol=1e-14)
        assert np.all(np.diff(lam) > 0.0)

    def test_orthonormal(self):
        beams = BeamModes(5)
        x, w = composite(np.linspace(0, 1, 9), 20)
        B = beams(x)
        np.testing.assert_allclose(B.T @ (w[:, None] * B), np.eye(5), atol=1e-10)

    def test_clamped_ends(self):
        beams = BeamModes(6)
        for x in (0.0, 1.0):
            assert np.max(np.abs(beams(np.array([x]), 0))) < 1e-12
            assert np.max(np.abs(beams(np.array([x]), 1))) < 1e-10

    def test_eigen_equation(self):
        beams = BeamModes(3)
        x = np.linspace(0.05, 0.95, 13)
        h = 1e-3
        # fourth derivative by differencing the analytic second derivative
        d4 = (beams(x + h, 2) - 2 * beams(x, 2) + beams(x - h, 2)) / h**2
        np.testing.assert_allclose(d4, beams(x) * beams.lam**4, rtol=1e-4, atol=1e-3)

    def test_invalid(self):
        with pytest.raises(ValueError):
            beam_eigenvalues(0)


class TestShellBasis:
    def test_clamping_on_boundary(self, shell3):
        t = np.linspace(0, 1, 21)
        edges = np.concatenate([
            np.column_stack([t, 0 * t]), np.column_stack([t, 0 * t + 1]),
            np.column_stack([0 * t, t]), np.column_stack([0 * t + 1, t]),
        ])
        v, g = shell3.evaluate(edges, 1)
        assert np.max(np.abs(v)) < 1e-10
        assert np.max(np.abs(g)) < 1e-10

    def test_ordering(self, shell3):
        assert shell3.size == 9
        assert shell3.pairs[0] == (0, 0)
        assert np.all(np.diff(shell3.frequencies2) >= 0.0)

    def test_truncation(self):
        assert ShellBasis(3, n_modes=4).size == 4
        with pytest.raises(ValueError):
            ShellBasis(2, n_modes=5)

    def test_field_gradient(self, shell3, rng):
        f = shell3.field(rng.standard_normal(shell3.size))
        y = 0.1 + 0.8 * rng.random((10, 2))
        h = 1e-6
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            fd = (f.value(y + e) - f.value(y - e)) / (2 * h)
            np.testing.assert_allclose(f.grad(y)[:, d], fd, rtol=1e-6, atol=1e-6)


class TestKoiterForm:
    def test_zero(self, shell3):
        K = KoiterOperator(shell3)
        z = np.zeros(shell3.size)
        assert K.koiter_form(z, z) == 0.0

    def test_first_mode_against_direct_quadrature(self, shell3):
        K = KoiterOperator(shell3, m=1.7)
        x, w = composite(np.linspace(0, 1, 11), 12)
        y, wy = tensor2(x, w, x, w)
        _, _, hess = shell3.evaluate(y)
        direct = 1.7 * np.sum(wy * np.sum(hess[:, 0] ** 2, axis=(-1, -2)))
        e0 = np.eye(shell3.size)[0]
        assert K.koiter_form(e0, e0) == pytest.approx(direct, rel=1e-10)

    def test_random_against_direct_quadrature(self, shell3, rng):
        b2 = np.array([[0.3, 0.1], [0.1, 0.2]])
        K = KoiterOperator(shell3, m=1.0, b2=b2, b0=0.5)
        eta, xi = rng.standard_normal((2, shell3.size))
        x, w = composite(np.linspace(0, 1, 11), 12)
        y, wy = tensor2(x, w, x, w)
        fe, fx = shell3.field(eta), shell3.field(xi)
        integrand = (
            np.einsum("qde,qde->q", fe.hess(y), fx.hess(y))
            + np.einsum("qd,de,qe->q", fe.grad(y), b2, fx.grad(y))
            + 0.5 * fe.value(y) * fx.value(y)
        )
        assert K.koiter_form(eta, xi) == pytest.approx(np.sum(wy * integrand), rel=1e-9)

    def test_symmetry_and_homogeneity(self, shell3, rng):
        K = KoiterOperator(shell3, b2=np.diag([0.2, 0.4]))
        eta, xi = rng.standard_normal((2, shell3.size))
        assert K.koiter_form(eta, xi) == pytest.approx(K.koiter_form(xi, eta), rel=1e-14)
        assert K.koiter_form(3 * eta, 3 * eta) == pytest.approx(9 * K.koiter_form(eta, eta), rel=1e-14)
        np.testing.assert_array_equal(K.K_matrix, K.K_matrix.T)

    def test_dimension_mismatch(self, shell3):
        K = KoiterOperator(shell3)
        with pytest.raises(DimensionMismatch):
            K.koiter_form(np.zeros(4), np.zeros(shell3.size))

    def test_rejects_bad_coefficients(self, shell3):
        with pytest.raises(ValueError):
            KoiterOperator(shell3, m=0.0)
        with pytest.raises(ValueError):
            KoiterOperator(shell3, b2=np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestCoercivity:
    def test_pure_bending_c0_in_unit_interval(self, shell3):
        c0, alpha = KoiterOperator(shell3).coercivity_constants()
        assert 0.0 < c0 <= 1.0
        assert alpha > 0.0

    def test_scaling_in_m(self, shell3):
        c0, alpha = KoiterOperator(shell3, m=1.0).coercivity_constants()
        c0_2, alpha_2 = KoiterOperator(shell3, m=2.0).coercivity_constants()
        assert c0_2 == pytest.approx(2 * c0, rel=1e-12)
        assert alpha_2 == pytest.approx(2 * alpha, rel=1e-12)

    def test_small_basis_dense_eigensolve(self):
        K = KoiterOperator(ShellBasis(2))
        assert K.K_matrix.shape == (4, 4)
        lam = eigh(K.K_matrix, K.mass + K.stiff1 + K.stiff2, eigvals_only=True)
        assert K.coercivity_constants()[0] == pytest.approx(lam[0], rel=1e-12)

    def test_rayleigh_quotients(self, shell3, rng):
        K = KoiterOperator(shell3)
        c0, _ = K.coercivity_constants()
        lmax = eigh(K.K_matrix, K.gram_h2, eigvals_only=True)[-1]
        X = rng.standard_normal((100, shell3.size))
        q = np.einsum("ri,ij,rj->r", X, K.K_matrix, X) / np.einsum("ri,ij,rj->r", X, K.gram_h2, X)
        assert np.all(q >= c0 * (1 - 1e-12))
        assert np.all(q <= lmax * (1 + 1e-12))

    def test_not_coercive(self, shell3):
        with pytest.raises(NotCoercive):
            KoiterOperator(shell3, b0=-1e4).coercivity_constants()


def test_bending_coefficient_positive_and_cubic():
    m1 = bending_coefficient(0.1, 1.0, 1.0)
    assert m1 > 0.0
    assert bending_coefficient(0.2, 1.0, 1.0) == pytest.approx(8 * m1)
