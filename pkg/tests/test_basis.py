import numpy as np
import pytest

from periodic_fsi.basis import (
    DeltaTrajectory,
    assemble_X,
    build_steady_divfree,
    density_sanity,
)
from periodic_fsi.errors import ContractError, IllConditioned
from periodic_fsi.extension import ExtensionOperator
from periodic_fsi.geometry import FunctionField
from periodic_fsi.verify import sample_displacement


@pytest.fixture(scope="module")
def moving(shell3):
    return sample_displacement(shell3, 0.005), sample_displacement(shell3, 0.01, phase=0.3)


@pytest.fixture(scope="module")
def basis6(curved_geom, shell3):
    return assemble_X(curved_geom, None, shell3, 6)


class TestSteadyFamily:
    def test_ordering_and_size(self, curved_geom):
        st = build_steady_divfree(curved_geom, 4)
        assert st.count == 4
        assert st.modes[0] == (-1, 0, 0)

    def test_chart_divergence_vanishes(self, curved_geom, rng):
        st = build_steady_divfree(curved_geom, 6)
        X = rng.random((200, 3))
        np.testing.assert_allclose(st.chart_divergence(X), 0.0, atol=1e-12)
        h = 1e-4
        div = np.zeros((200, st.count))
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            f = lambda s: st.chart_field(X + s * e)[..., d]  # noqa: E731
            div += (-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / (12 * h)
        assert np.max(np.abs(div)) < 1e-8

    def test_no_tangential_trace_on_pressure_faces(self, curved_geom, rng):
        st = build_steady_divfree(curved_geom, 6)
        for y1 in (0.0, 1.0):
            Xs = np.column_stack([np.full(50, y1), rng.random((50, 2))])
            x, jac, det = curved_geom.chart(Xs)
            phys = np.einsum("qij,qkj->qki", jac, st.chart_field(Xs)) / det[:, None, None]
            assert np.max(np.abs(phys[..., 1:])) < 1e-10

    def test_through_flow_unit_flux(self, curved_geom):
        left, right = build_steady_divfree(curved_geom, 4).face_fluxes(curved_geom)
        assert left[0] == pytest.approx(-1.0, abs=1e-12)
        assert right[0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(left[1:], 0.0, atol=1e-12)

    def test_invalid(self, curved_geom):
        with pytest.raises(ValueError):
            build_steady_divfree(curved_geom, 0)


class TestAssemble:
    def test_two_member_flat(self, flat_geom, shell3):
        gb = assemble_X(flat_geom, None, shell3, 2)
        assert gb.labels == [("Y", 0), ("Z", 0)]
        np.testing.assert_allclose(gb.omega_coeffs[0], np.eye(shell3.size)[0], atol=1e-10)
        assert not np.any(gb.omega_coeffs[1])
        st = build_steady_divfree(flat_geom, 1)
        norm = np.sqrt(st.trace_gram(flat_geom)[0, 0])
        assert gb.gamma_coeffs[1, 0] == pytest.approx(1.0 / norm)

    def test_interleaving(self, basis6):
        assert [k for k, _ in basis6.labels] == ["Y", "Z"] * 3
        assert basis6.y_index == [0, 2, 4]
        np.testing.assert_array_equal(basis6.shell_active, [0, 2, 4])

    def test_trace_gram_identity(self, basis6):
        np.testing.assert_allclose(basis6.trace_gram(), np.eye(6), atol=1e-10)
        assert basis6.gram_cond < 1e8

    def test_moving_trace(self, basis6, moving):
        delta, _ = moving
        assert np.max(basis6.lid_trace_residual(delta)) < 1e-8

    def test_divergence_free_at_moving_node(self, basis6, moving):
        bs = basis6.evaluate(*moving)
        assert np.max(basis6.divergence_residual(bs)) < 1e-6
        assert np.any(bs.dt != 0.0)

    def test_traces_time_independent(self, basis6, shell3, moving):
        traj = DeltaTrajectory(shell3, 1.0, np.stack([np.zeros(9), moving[0].coeffs]),
                               np.stack([np.zeros(9), moving[1].coeffs]))
        gb = basis6.with_trajectory(traj)
        assert gb.omega_coeffs is basis6.omega_coeffs
        assert not traj.is_static

    def test_node_requires_trajectory(self, basis6):
        with pytest.raises(ContractError):
            basis6.node(0)

    def test_ill_conditioned(self, curved_geom, shell3):
        with pytest.raises(IllConditioned):
            assemble_X(curved_geom, None, shell3, 6, cond_max=1.5)

    @pytest.mark.parametrize("n", [0, 3])
    def test_dimension_checks(self, curved_geom, shell3, n):
        with pytest.raises(ValueError):
            assemble_X(curved_geom, None, shell3, n)


class TestTrajectory:
    def test_zero(self, shell3):
        traj = DeltaTrajectory.zero(shell3, 2.0, 8)
        assert traj.n_nodes == 8
        assert traj.is_static
        np.testing.assert_allclose(traj.times, np.arange(8) * 0.25)

    def test_orientation_bound(self, curved_geom, shell3):
        c = np.zeros((2, shell3.size))
        c[1, 0] = -0.1
        traj = DeltaTrajectory(shell3, 1.0, c, np.zeros_like(c))
        assert traj.min_det(curved_geom) < curved_geom.min_shift_det(np.array([0.0]))
        assert traj.sup_abs(curved_geom) > 0.0


class TestDensity:
    def test_member_of_span(self, curved_geom, shell3):
        big = assemble_X(curved_geom, None, shell3, 8)
        fn = big._raw_fn(None)
        q = lambda X: fn(X)[:, 2]  # noqa: E731
        xi = shell3.field(big.omega_coeffs[2])
        err = density_sanity(curved_geom, shell3, (q, xi), sizes=(4, 8))
        assert err[4] < 1e-10
        assert err[8] < 1e-10

    def test_non_basis_probe_decreases(self, curved_geom, shell3):
        def val(y):
            return (np.sin(np.pi * y[..., 0]) * np.sin(np.pi * y[..., 1])) ** 2 * (1 + y[..., 0])

        def grad(y, h=1e-6):
            e = np.eye(2) * h
            return np.stack([(val(y + e[i]) - val(y - e[i])) / (2 * h) for i in range(2)], -1)

        xi = FunctionField(val, grad)
        batch = type("One", (), {"value": lambda self, y: val(y)[..., None],
                                 "grad": lambda self, y: grad(y)[..., None, :]})()
        op = ExtensionOperator(curved_geom)
        q = lambda X: op.physical_at_reference(X, batch)[:, 0]  # noqa: E731
        err = density_sanity(curved_geom, shell3, (q, xi), sizes=(4, 8, 16))
        assert err[4] > err[8] > err[16]

    def test_incompatible_probe(self, curved_geom, shell3):
        xi = shell3.field(np.eye(shell3.size)[0])
        q = lambda X: np.zeros((len(X), 3))  # noqa: E731
        with pytest.raises(ContractError):
            density_sanity(curved_geom, shell3, (q, xi), sizes=(4,))
