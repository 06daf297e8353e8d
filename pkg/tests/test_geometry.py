import numpy as np
import pytest

from periodic_fsi.errors import DegenerateMap, OutsideCollar
from periodic_fsi.fields import divergence, evaluate_with_gradient, l2_norm, sample_domain
from periodic_fsi.geometry import FunctionField, Geometry, j_eta_formula
from periodic_fsi.profiles import LidProfile
from periodic_fsi.verify import sample_displacement

CENTRE = np.array([0.5, 0.5])


def constant_field(c):
    return FunctionField(lambda y: c * np.ones(y.shape[:-1]), lambda y: np.zeros(y.shape))


class TestLidPoint:
    def test_flat_identity(self, flat_geom):
        np.testing.assert_allclose(flat_geom.lid_point(CENTRE), [0.5, 0.5, 1.0])

    def test_flat_normal_offset(self, flat_geom):
        np.testing.assert_allclose(flat_geom.lid_point(CENTRE, 0.2), [0.5, 0.5, 1.2])

    def test_sin2_peak(self, curved_geom):
        np.testing.assert_allclose(curved_geom.lid_point(CENTRE), [0.5, 0.5, 1.1], atol=1e-15)


class TestCurvature:
    def test_flat_vanishes(self, flat_geom, rng):
        c = flat_geom.curvature_at(rng.random((50, 2)))
        for arr in (c.kappa1, c.kappa2, c.gauss, c.mean_sum):
            assert np.all(arr == 0.0)
        assert flat_geom.kappa == 0.0

    def test_sin2_peak(self, curved_geom):
        # Hessian -2 A pi^2 Id at the peak; the dome bends away from the outward normal
        c = curved_geom.curvature_at(CENTRE)
        expected = -2.0 * 0.1 * np.pi**2
        assert c.kappa1 == pytest.approx(expected, rel=1e-12)
        assert c.kappa2 == pytest.approx(expected, rel=1e-12)

    def test_cap_matches_sphere(self):
        g = Geometry(LidProfile("cap", radius=2.0), L=0.1)
        c = g.curvature_at(CENTRE)
        assert c.kappa1 == pytest.approx(-0.5, rel=1e-10)
        assert c.kappa2 == pytest.approx(-0.5, rel=1e-10)

    def test_am_gm(self, curved_geom, rng):
        c = curved_geom.curvature_at(rng.random((200, 2)))
        assert np.all(c.gauss <= c.mean**2 + 1e-14)

    def test_collar_too_wide_rejected(self):
        with pytest.raises(ValueError, match="too large"):
            Geometry(LidProfile("sin2", 0.1), L=0.5)


class TestTubular:
    def test_flat_inside(self, flat_geom):
        t = flat_geom.tubular_project(np.array([0.5, 0.5, 0.9]))
        np.testing.assert_allclose(t.p, [0.5, 0.5, 1.0])
        assert t.s == pytest.approx(-0.1)

    def test_flat_outside_positive(self, flat_geom):
        t = flat_geom.tubular_project(np.array([0.3, 0.7, 1.05]))
        np.testing.assert_allclose(t.p, [0.3, 0.7, 1.0])
        assert t.s == pytest.approx(0.05)

    def test_curved_along_normal(self, curved_geom):
        d = curved_geom.lid(CENTRE)
        t = curved_geom.tubular_project(d.phi - 0.07 * d.nu)
        np.testing.assert_allclose(t.p, d.phi, atol=1e-10)
        assert t.s == pytest.approx(-0.07, abs=1e-10)

    def test_reconstruction(self, curved_geom, rng):
        y = 0.1 + 0.8 * rng.random((100, 2))
        s = curved_geom.L * (rng.random(100) - 0.5)
        d = curved_geom.lid(y)
        x = d.phi + s[:, None] * d.nu
        t = curved_geom.tubular_project(x)
        assert t.converged
        assert t.residual < 1e-8
        np.testing.assert_allclose(t.s, s, atol=1e-10)

    def test_outside_collar(self, flat_geom):
        with pytest.raises(OutsideCollar):
            flat_geom.tubular_project(np.array([0.5, 0.5, 0.5]))


class TestCutoff:
    def test_plateaus(self, curved_geom):
        L = curved_geom.L
        assert curved_geom.cutoff_sigma(0.0) == 1.0
        assert curved_geom.cutoff_sigma(0.5 * L) == 1.0
        assert curved_geom.cutoff_sigma(1.5 * L) == 0.0
        assert curved_geom.cutoff_sigma(-L) == 0.0

    def test_transition_symmetric(self, curved_geom):
        L = curved_geom.L
        assert curved_geom.cutoff_sigma(0.75 * L) == pytest.approx(0.5)
        s = np.linspace(0.5 * L, L, 41)
        mirror = curved_geom.cutoff_sigma(s) + curved_geom.cutoff_sigma(1.5 * L - s)
        np.testing.assert_allclose(mirror, 1.0, atol=1e-14)

    def test_monotone_and_even(self, curved_geom):
        s = np.linspace(0.0, 1.2 * curved_geom.L, 200)
        v = curved_geom.cutoff_sigma(s)
        assert np.all(np.diff(v) <= 0.0)
        np.testing.assert_array_equal(v, curved_geom.cutoff_sigma(-s))

    def test_derivative(self, curved_geom):
        s = np.linspace(-0.95, 0.95, 37) * curved_geom.L
        h = 1e-7
        fd = (curved_geom.cutoff_sigma(s + h) - curved_geom.cutoff_sigma(s - h)) / (2 * h)
        np.testing.assert_allclose(curved_geom.cutoff_sigma(s, 1), fd, atol=1e-5)


class TestHanzawa:
    def test_zero_is_identity(self, curved_geom, rng):
        x = np.column_stack([rng.random((20, 2)), 0.2 + 0.7 * rng.random(20)])
        xs, jac, det = curved_geom.hanzawa_map(None, x)
        np.testing.assert_allclose(xs, x, atol=1e-13)
        np.testing.assert_allclose(jac, np.broadcast_to(np.eye(3), jac.shape), atol=1e-12)
        np.testing.assert_allclose(det, 1.0, atol=1e-12)

    def test_flat_constant_shift(self, flat_geom):
        xs, _, det = flat_geom.hanzawa_map(constant_field(0.05), np.array([[0.5, 0.5, 1.0]]))
        np.testing.assert_allclose(xs, [[0.5, 0.5, 1.05]], atol=1e-14)
        assert det[0] > 0.0

    @pytest.mark.parametrize("amplitude", [0.005, 0.02, 0.04])
    def test_inverse_shift_roundtrip(self, curved_geom, shell3, rng, amplitude):
        d = sample_displacement(shell3, amplitude)
        X = rng.random((5000, 3))
        back = curved_geom.shift_inverse(d, curved_geom.shift(d, X)[0])
        np.testing.assert_allclose(back, X, atol=1e-13)

    def test_volume_two_quadratures(self, curved_geom, shell3):
        d = sample_displacement(shell3, 0.005)
        X, Xs, x, w, jac = curved_geom.deformed_quadrature(d, 8, 8, 16)
        assert np.sum(w) == pytest.approx(curved_geom.graph_volume(d, n=16), abs=1e-6)

    def test_orientation(self, curved_geom, shell3):
        assert curved_geom.check_orientation(sample_displacement(shell3, 0.005)) > 0.0

    def test_min_shift_det(self, curved_geom):
        L = curved_geom.L
        assert curved_geom.min_shift_det(np.array([0.3, 0.0])) == 1.0
        assert curved_geom.min_shift_det(np.array([-4.0 * L / 15.0])) == pytest.approx(0.0, abs=1e-14)

    def test_fold_detected(self, curved_geom):
        with pytest.raises(DegenerateMap):
            curved_geom.shift_inverse(constant_field(-0.3 * curved_geom.L), np.array([[0.5, 0.5, 0.95]]))

    def test_plateau_reached(self, curved_geom, shell3):
        with pytest.raises(DegenerateMap):
            curved_geom.volume(sample_displacement(shell3, -0.1))


class TestPiola:
    def test_identity_for_zero(self, curved_geom):
        e1 = lambda x: np.broadcast_to([1.0, 0.0, 0.0], x.shape)  # noqa: E731
        x = np.array([[0.4, 0.6, 0.5], [0.3, 0.3, 0.97]])
        np.testing.assert_allclose(curved_geom.piola_transform(None, e1)(x), [[1, 0, 0]] * 2, atol=1e-12)

    def test_preserves_divergence_free(self, curved_geom, shell3):
        d = sample_displacement(shell3, 0.005)

        def u(x):
            a, b, z = x[..., 0], x[..., 1], x[..., 2]
            return np.stack(
                [np.pi * np.sin(np.pi * a) * np.cos(np.pi * b) * z,
                 -np.pi * np.cos(np.pi * a) * np.sin(np.pi * b) * z, 0.0 * a], -1
            )

        mapped = curved_geom.piola_transform(d, u)
        sample = sample_domain(curved_geom, d, 3, 3)
        fn = lambda X: mapped(curved_geom.chart(curved_geom.shift(d, X)[0])[0])  # noqa: E731
        vals, grads = evaluate_with_gradient(sample, fn, h=1e-5, order=4)
        assert l2_norm(sample, divergence(grads)) < 1e-6
        assert np.all(l2_norm(sample, vals)[:2] > 0.5)


class TestJWeight:
    def test_formula(self):
        assert j_eta_formula(1.0, 2.0, 0.1) == pytest.approx(0.61)

    def test_zero_eta(self, curved_geom, rng):
        np.testing.assert_array_equal(curved_geom.j_eta_weight(rng.random((10, 2)), 0.0), 1.0)

    def test_flat_is_one(self, flat_geom, rng):
        np.testing.assert_array_equal(flat_geom.j_eta_weight(rng.random((10, 2)), 0.3), 1.0)
