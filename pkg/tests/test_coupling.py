import numpy as np
import pytest

from periodic_fsi.assembly import domain_measures
from periodic_fsi.basis import assemble_X
from periodic_fsi.coupling import (
    CoupledProblem,
    CouplingState,
    admissibility_check,
    calibrate,
    coupling_residual,
    forcing_budget,
    outer_iterate,
    solve_coupled,
    sup_constant,
)
from periodic_fsi.errors import BudgetExceeded, LeftAdmissibleSet, NoConvergence
from periodic_fsi.geometry import Geometry
from periodic_fsi.profiles import LidProfile
from periodic_fsi.forcing import ForcingSpec, TimeProfile
from periodic_fsi.shell import KoiterOperator


@pytest.fixture(scope="module")
def K_op(shell3):
    return KoiterOperator(shell3)


@pytest.fixture(scope="module")
def flat_basis(flat_geom, shell3):
    return assemble_X(flat_geom, None, shell3, 4)


@pytest.fixture(scope="module")
def flat_cal(flat_basis, K_op):
    return calibrate(flat_basis, K_op, 1.0)


def pressure_forcing(amplitude):
    return ForcingSpec(1.0, p_in=TimeProfile("sin", amplitude))


@pytest.fixture(scope="module")
def small_problem(flat_basis, K_op, flat_cal):
    return CoupledProblem(flat_basis, K_op, pressure_forcing(0.01 * flat_cal.C_tilde), 16, flat_cal)


@pytest.fixture(scope="module")
def small_result(small_problem):
    return solve_coupled(small_problem, tol=1e-6, max_iter=50)


class TestCalibration:
    def test_flat_values(self, flat_cal):
        assert flat_cal.c0 == pytest.approx(0.98074, rel=1e-4)
        assert flat_cal.C_inf == pytest.approx(0.069175, rel=1e-4)
        assert flat_cal.M_tilde == pytest.approx(1.01231, rel=1e-4)
        assert flat_cal.C_tilde == pytest.approx(0.074858, rel=1e-4)
        assert flat_cal.L_adm == pytest.approx(0.1)

    def test_energy_budget_controls_sup(self, flat_cal):
        # E <= M^2 with E >= c0/2 |eta|_H2^2 gives |eta|_inf <= L_adm
        bound = flat_cal.C_inf * np.sqrt(2 * flat_cal.M_tilde**2 / flat_cal.c0)
        assert bound == pytest.approx(flat_cal.L_adm, rel=1e-12)

    def test_sup_constant_bounds_random_fields(self, flat_basis, K_op, rng):
        C = sup_constant(flat_basis, K_op)
        W = flat_basis.omega_coeffs[flat_basis.shell_active]
        g = np.linspace(0, 1, 97)
        y = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        V = flat_basis.shell_basis.evaluate(y, 0)
        for _ in range(20):
            c = rng.standard_normal(len(W)) @ W
            h2 = np.sqrt(c @ K_op.gram_h2 @ c)
            assert np.max(np.abs(V @ c)) <= C * h2 * (1 + 1e-12)

    def test_curved_budget_is_smaller(self, shell3, K_op, flat_cal):
        geom = Geometry(LidProfile("sin2", 0.05), L=0.2)
        cal = calibrate(assemble_X(geom, None, shell3, 4), K_op, 1.0)
        assert cal.c_lk > flat_cal.c_lk
        assert cal.C_tilde < flat_cal.C_tilde

    def test_as_dict(self, flat_cal):
        d = flat_cal.as_dict()
        assert set(d) >= {"M_tilde", "C_tilde", "c_lk", "c_lk12", "theta"}
        assert flat_cal.constants().M_tilde == flat_cal.M_tilde


class TestBudget:
    def test_quadratic(self, flat_basis):
        m = domain_measures(flat_basis)
        f = ForcingSpec(1.0, g_profile=TimeProfile("cos", 0.3), p_in=TimeProfile("sin", 0.2))
        assert forcing_budget(f.scaled(2.0), m, 0.9) == pytest.approx(4 * forcing_budget(f, m, 0.9))
        assert forcing_budget(ForcingSpec(1.0), m, 0.9) == 0.0

    def test_exceeded(self, flat_basis, K_op, flat_cal):
        prob = CoupledProblem(flat_basis, K_op, pressure_forcing(10.0), 8, flat_cal)
        with pytest.raises(BudgetExceeded):
            solve_coupled(prob)


class TestAdmissibility:
    def test_zero_member(self, small_problem):
        z = np.zeros((16, 4))
        adm = admissibility_check(small_problem.delta_trajectory(z, z), small_problem.admissible,
                                  small_problem.K_op, small_problem.basis.geom)
        assert adm["member"] and adm["min_det"] == 1.0 and adm["energy"] == 0.0

    def test_sup_violation(self, small_problem):
        b = np.zeros((16, 4))
        b[:, 0] = 10.0
        adm = admissibility_check(small_problem.delta_trajectory(b, 0 * b), small_problem.admissible,
                                  small_problem.K_op, small_problem.basis.geom)
        assert not adm["L_ok"] and not adm["member"] and adm["L_margin"] < 0

    def test_left_admissible_set(self, flat_basis, K_op, flat_cal):
        prob = CoupledProblem(flat_basis, K_op, pressure_forcing(200.0), 8, flat_cal)
        with pytest.raises(LeftAdmissibleSet) as info:
            outer_iterate(CouplingState.zero(8, 4), prob)
        assert info.value.bound in ("L", "M", "orientation")


class TestResidual:
    def test_zero_when_equal(self, small_problem, rng):
        b, bd = rng.standard_normal((2, 16, 4))
        assert coupling_residual(small_problem, b, bd, b, bd) == 0.0
        assert coupling_residual(small_problem, 0 * b, 0 * b, 0 * b, 0 * b) == 0.0

    def test_scale_invariant(self, small_problem, rng):
        b, bd, a, ad = rng.standard_normal((4, 16, 4))
        r1 = coupling_residual(small_problem, b, bd, a, ad)
        assert coupling_residual(small_problem, 3 * b, 3 * bd, 3 * a, 3 * ad) == pytest.approx(r1)


class TestSolveCoupled:
    def test_converges(self, small_result):
        assert small_result.converged
        res = [h["residual"] for h in small_result.state.history]
        assert res[-1] < 1e-6 and len(res) <= 50
        assert res[0] == pytest.approx(1.0) and res[-1] < res[0]

    def test_checks_pass(self, small_result):
        names = {c.name for c in small_result.checks}
        assert {"periodicity", "diffusion estimate", "energy budget", "hanzawa orientation"} <= names
        assert small_result.all_passed, [c.as_dict() for c in small_result.checks if not c.passed]

    def test_fixed_point(self, small_result, small_problem):
        st = small_result.state
        assert coupling_residual(small_problem, st.b_prev, st.b_dot_prev, st.a, st.a_dot) < 1e-6
        assert np.any(st.a != 0.0)

    def test_ledger(self, small_result):
        led = small_result.ledger()
        assert led["iterations"] == len(led["history"])
        assert led["budget"] <= led["calibration"]["C_tilde"]

    def test_no_convergence(self, small_problem):
        with pytest.raises(NoConvergence) as info:
            solve_coupled(small_problem, tol=1e-15, max_iter=2)
        assert len(info.value.history) == 2

    def test_callback_and_resume(self, small_problem, small_result):
        seen = []
        part = solve_coupled(small_problem, max_iter=50, tol=1e-3, callback=lambda s: seen.append(s.iteration))
        assert seen == list(range(1, len(seen) + 1))
        resumed = solve_coupled(small_problem, tol=1e-6, state=part.state)
        np.testing.assert_allclose(resumed.state.a, small_result.state.a, atol=1e-8)
