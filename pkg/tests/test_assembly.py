import numpy as np
import pytest

from periodic_fsi.assembly import (
    assemble,
    energy,
    energy_balance_residual,
    korn_check,
    load_vectors,
    moving_quadrature,
    reynolds_check,
)
from periodic_fsi.basis import DeltaTrajectory, assemble_X
from periodic_fsi.errors import ContractError, DimensionMismatch
from periodic_fsi.fields import sample_domain
from periodic_fsi.forcing import ForcingSpec, TimeProfile
from periodic_fsi.periodic import Propagator
from periodic_fsi.shell import KoiterOperator
from periodic_fsi.state import StateVector


def sine_trajectory(shell_basis, n_nodes, amplitude=0.005, period=1.0):
    t = np.arange(n_nodes) * (period / n_nodes)
    w = 2 * np.pi / period
    c = np.zeros((n_nodes, shell_basis.size))
    r = np.zeros_like(c)
    c[:, 0] = amplitude * np.sin(w * t)
    r[:, 0] = amplitude * w * np.cos(w * t)
    return DeltaTrajectory(shell_basis, period, c, r)


@pytest.fixture(scope="module")
def K_op(shell3):
    return KoiterOperator(shell3)


@pytest.fixture(scope="module")
def moving_system(curved_geom, shell3, K_op):
    traj = sine_trajectory(shell3, 8)
    gb = assemble_X(curved_geom, traj, shell3, 4)
    forcing = ForcingSpec(1.0, p_in=TimeProfile("const", 0.3), p_out=TimeProfile("const", 0.3),
                          g_profile=TimeProfile("sin", 0.2))
    t = traj.times
    v = np.zeros((8, 4))
    v[:, 0] = np.cos(2 * np.pi * t)
    v[:, 1] = 0.5
    return gb, assemble(gb, K_op, forcing, v_coeffs=v), forcing


@pytest.fixture(scope="module")
def static_flat(flat_geom, shell3, K_op):
    gb = assemble_X(flat_geom, DeltaTrajectory.zero(shell3, 1.0, 4), shell3, 2)
    return gb, assemble(gb, K_op, ForcingSpec(1.0))


class TestMovingQuadrature:
    def test_unit_box(self, flat_geom):
        assert moving_quadrature(flat_geom, None, lambda x: np.ones(len(x))) == pytest.approx(1.0, abs=1e-14)

    def test_flat_with_bump(self, flat_geom, shell3):
        bump = shell3.field(0.02 * np.eye(shell3.size)[0])
        y, w = flat_geom.surface_quadrature(16)
        expected = 1.0 + np.sum(w * bump.value(y))
        vol = moving_quadrature(flat_geom, bump, lambda x: np.ones(len(x)), n_y=4, n_z=4)
        assert vol == pytest.approx(expected, abs=1e-10)

    def test_polynomial_exact(self, flat_geom):
        val = moving_quadrature(flat_geom, None, lambda x: x[:, 0] ** 2 * x[:, 1] * x[:, 2] ** 3)
        assert val == pytest.approx(1 / 3 * 1 / 2 * 1 / 4, abs=1e-15)

    def test_vector_integrand(self, flat_geom):
        val = moving_quadrature(flat_geom, None, lambda x: x)
        np.testing.assert_allclose(val, [0.5, 0.5, 0.5], atol=1e-15)


class TestAssemble:
    def test_mass_spd_every_node(self, moving_system):
        _, S, _ = moving_system
        for i in range(S.n_nodes):
            np.testing.assert_array_equal(S.mass(i), S.mass(i).T)
            assert np.linalg.eigvalsh(S.mass(i))[0] > 0.0
        assert all(s["mass_min"] > 0 for s in S.spectra())

    def test_transport_skew(self, moving_system):
        _, S, _ = moving_system
        assert np.max(np.abs(S.conv)) > 0.0
        assert np.max(np.abs(S.conv + S.conv.transpose(0, 2, 1))) < 1e-12

    def test_finite(self, moving_system):
        _, S, _ = moving_system
        for arr in (S.mass_fluid, S.visc, S.conv, S.dtpair, S.loads):
            assert np.all(np.isfinite(arr))

    def test_no_transport_without_velocity(self, curved_geom, shell3, K_op):
        gb = assemble_X(curved_geom, sine_trajectory(shell3, 4), shell3, 2)
        S = assemble(gb, K_op, ForcingSpec(1.0))
        assert not np.any(S.conv)

    def test_static_flat_two_members(self, static_flat):
        _, S = static_flat
        for i in range(1, S.n_nodes):
            np.testing.assert_array_equal(S.mass(i), S.mass(0))
        assert S.shell_mass[0, 0] == pytest.approx(1.0, abs=1e-10)
        assert S.shell_mass[1, 1] == 0.0
        assert np.linalg.eigvalsh(S.mass(0))[0] > 0.0

    def test_mass_independent_quadrature(self, moving_system):
        gb, S, _ = moving_system
        traj = gb.delta_traj
        bs = gb.evaluate(traj.field(2), None,
                         sample=sample_domain(gb.geom, traj.field(2), gb.n_y, gb.n_z))
        M = np.einsum("q,qid,qjd->ij", bs.sample.w, bs.values, bs.values)
        np.testing.assert_allclose(M, S.mass_fluid[2], atol=1e-12)

    def test_pressure_load_vanishes_for_zero_flux_members(self, moving_system):
        gb, S, _ = moving_system
        z = [k for k, (kind, _) in enumerate(gb.labels) if kind == "Z"]
        np.testing.assert_allclose(S.load_parts["pressure"][:, z], 0.0, atol=1e-14)
        assert np.any(S.load_parts["pressure"][:, gb.y_index] != 0.0)

    def test_load_linearity(self, moving_system):
        _, S, forcing = moving_system
        one = load_vectors(S, forcing)
        two = load_vectors(S, forcing.scaled(2.0))
        for key in one:
            np.testing.assert_allclose(two[key], 2 * one[key], atol=1e-15)

    def test_dimension_mismatch(self, moving_system, K_op):
        gb, _, forcing = moving_system
        with pytest.raises(DimensionMismatch):
            assemble(gb, K_op, forcing, v_coeffs=np.zeros((3, 4)))

    def test_contract_errors(self, moving_system, K_op, curved_geom, shell3):
        gb, _, _ = moving_system
        with pytest.raises(ContractError):
            assemble(gb, K_op, ForcingSpec(2.0))
        with pytest.raises(ContractError):
            assemble(assemble_X(curved_geom, None, shell3, 2), K_op, ForcingSpec(1.0))

    def test_boundary_tensor(self, curved_geom, shell3, K_op):
        gb = assemble_X(curved_geom, sine_trajectory(shell3, 2), shell3, 2)
        S = assemble(gb, K_op, ForcingSpec(1.0), boundary_term=True)
        assert S.boundary.shape == (2, 2, 2, 2)
        np.testing.assert_allclose(S.boundary[0], S.boundary[0].transpose(1, 0, 2), atol=1e-15)


class TestEnergy:
    def test_zero_state(self, moving_system):
        _, S, _ = moving_system
        assert energy(S, 0.0, np.zeros(4), np.zeros(4)) == 0.0

    def test_first_shell_velocity(self, moving_system):
        _, S, _ = moving_system
        e1 = np.eye(4)[0]
        expected = 0.5 * S.mass_fluid[0][0, 0] + 0.5 * S.shell_mass[0, 0]
        assert energy(S, 0.0, np.zeros(4), e1) == pytest.approx(expected, rel=1e-14)

    def test_quadratic_scaling(self, moving_system, rng):
        _, S, _ = moving_system
        a, p = rng.standard_normal((2, 4))
        assert energy(S, 0.3, 3 * a, 3 * p) == pytest.approx(9 * energy(S, 0.3, a, p), rel=1e-13)

    def test_zero_forcing_zero_state(self, curved_geom, shell3, K_op):
        gb = assemble_X(curved_geom, sine_trajectory(shell3, 8), shell3, 4)
        S = assemble(gb, K_op, ForcingSpec(1.0))
        prop = Propagator(S)
        traj = prop.run(np.zeros(4), np.zeros(4), forced=True, record=True)
        np.testing.assert_array_equal(energy_balance_residual(S, traj), 0.0)

    def test_balance_defect_is_secant_term(self, moving_system):
        _, S, _ = moving_system
        traj = Propagator(S, refine=2).run(np.array([0.01, 0, -0.02, 0]),
                                           np.array([0.1, 0.2, -0.1, 0.05]), record=True)
        res = energy_balance_residual(S, traj)
        dp = np.diff(traj.a_dot, axis=0)
        dM = [S.mass_at(t1) - S.mass_at(t0) for t0, t1 in zip(traj.times[:-1], traj.times[1:])]
        predicted = np.einsum("ji,jik,jk->j", dp, np.array(dM), dp) / (8 * traj.dt)
        assert np.max(np.abs(res)) > 1e-4
        np.testing.assert_allclose(res, predicted, atol=1e-12)

    def test_balance_second_order(self, moving_system):
        _, S, _ = moving_system
        x0 = StateVector(np.array([0.01, 0, -0.02, 0]), np.array([0.1, 0.2, -0.1, 0.05]))
        res = []
        for refine in (16, 32):
            traj = Propagator(S, refine=refine).run(x0.a, x0.a_dot, forced=True, record=True)
            tail = energy_balance_residual(S, traj)[traj.a.shape[0] // 2:]
            res.append(np.max(np.abs(tail)))
        assert 3.0 <= res[0] / res[1] <= 5.0

    def test_dissipation_dominated_decay(self, static_flat):
        _, S = static_flat
        F = np.full((S.n_nodes, S.n), 1e-4)
        S = S.with_loads({"body": F})
        traj = Propagator(S, refine=4).run(np.zeros(2), np.array([0.5, 0.5]), forced=True, record=True)
        pm = traj.midpoint_velocities()
        dE = np.diff([energy(S, t, a, p) for t, a, p in zip(traj.times, traj.a, traj.a_dot)])
        power = np.array([p @ F[0] for p in pm])
        diss = np.array([p @ S.visc[0] @ p for p in pm])
        decaying = power < diss
        assert decaying.any()
        assert np.all(dE[decaying] < 0.0)


class TestChecks:
    def test_korn_converges(self, curved_geom):
        rel = [korn_check(curved_geom, n_y=n, n_z=n)["rel_diff"] for n in (4, 6, 8)]
        assert rel[0] > rel[1] > rel[2]
        assert rel[2] < 1e-8

    def test_korn_moving(self, curved_geom, shell3):
        delta = shell3.field(0.005 * np.eye(shell3.size)[0])
        assert korn_check(curved_geom, delta, n_y=8, n_z=8)["rel_diff"] < 1e-8

    def test_reynolds_second_order(self, curved_geom, shell3):
        e16 = reynolds_check(curved_geom, sine_trajectory(shell3, 16))
        e32 = reynolds_check(curved_geom, sine_trajectory(shell3, 32))
        assert 3.5 <= e16 / e32 <= 4.5
