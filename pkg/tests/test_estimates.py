import numpy as np
import pytest

from periodic_fsi.assembly import assemble
from periodic_fsi.basis import DeltaTrajectory, assemble_X
from periodic_fsi.estimates import (
    EstimateCheck,
    EstimateConstants,
    calibrate_forcing_budget,
    estimate_checks,
    system_constants,
)
from periodic_fsi.forcing import ForcingSpec, TimeProfile
from periodic_fsi.periodic import periodic_solve
from periodic_fsi.shell import KoiterOperator


@pytest.fixture(scope="module")
def solved(curved_geom, shell3):
    N = 8
    t = np.arange(N) / N
    c = np.zeros((N, shell3.size))
    r = np.zeros_like(c)
    c[:, 0] = 0.004 * np.sin(2 * np.pi * t)
    r[:, 0] = 0.008 * np.pi * np.cos(2 * np.pi * t)
    gb = assemble_X(curved_geom, DeltaTrajectory(shell3, 1.0, c, r), shell3, 4)
    forcing = ForcingSpec(
        1.0,
        f_profile=TimeProfile("cos", 0.5),
        g_profile=TimeProfile("sin", 0.2),
        p_in=TimeProfile("sin", 0.1),
    )
    system = assemble(gb, KoiterOperator(shell3), forcing)
    return system, periodic_solve(system, refine=4), forcing


class TestEstimateCheck:
    def test_margin(self):
        chk = EstimateCheck("x", 1.0, 3.0)
        assert chk.margin == 2.0 and chk.passed
        d = chk.as_dict()
        assert d == {"name": "x", "lhs": 1.0, "rhs": 3.0, "margin": 2.0, "passed": True}

    def test_roundoff_slack(self):
        assert EstimateCheck("x", 1.0 + 1e-14, 1.0).passed
        assert not EstimateCheck("x", 1.0 + 1e-9, 1.0).passed


class TestBudget:
    def test_root_solves_relation(self):
        M, th, cl, cl12, T = 1.01231, 0.5, 0.89624, 0.9, 1.0
        C = calibrate_forcing_budget(M, th, cl, cl12, T)
        q = 1.0 / (th**2 * (1 - th))
        lhs = q * (cl**2 * C**2 + cl12 * C) + (T * T + T + 1) / (T * (1 - th)) * C
        assert lhs == pytest.approx(M**2, rel=1e-13)
        assert C > 0.0

    def test_monotone(self):
        base = calibrate_forcing_budget(1.0, 0.5, 0.9, 0.9, 1.0)
        assert calibrate_forcing_budget(1.2, 0.5, 0.9, 0.9, 1.0) > base
        assert calibrate_forcing_budget(1.0, 0.5, 0.95, 0.95, 1.0) < base

    def test_linear_limit(self):
        C = calibrate_forcing_budget(1.0, 0.5, 0.0, 0.0, 1.0)
        assert C == pytest.approx(1.0 / 6.0)

    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.2])
    def test_theta_range(self, theta):
        with pytest.raises(ValueError):
            calibrate_forcing_budget(1.0, theta, 0.9, 0.9, 1.0)

    @pytest.mark.parametrize("theta", [0.25, 0.5, 0.75])
    def test_sup_bound_at_unit_period(self, theta):
        M, cl, cl12 = 1.01231, 0.89624, 0.9
        C = calibrate_forcing_budget(M, theta, cl, cl12, 1.0)
        consts = EstimateConstants(C, M, 50.0, theta, cl, cl12, 0.2, 1.0, 0.98)
        assert consts.sup_energy_bound() == pytest.approx(M**2 / (1 - theta), rel=1e-12)

    def test_sup_bound_needs_long_period(self):
        consts = EstimateConstants(0.1, 1.0, 50.0, 0.5, 0.9, 0.9, 0.2, 0.4, 0.98)
        assert np.isnan(consts.sup_energy_bound())


class TestSystemConstants:
    def test_generalized_rayleigh(self, solved, rng):
        system, _, _ = solved
        C = system_constants(system)
        gd = system.geometry_data
        for _ in range(20):
            u = rng.standard_normal(system.n)
            i = rng.integers(system.n_nodes)
            A = u @ system.visc[i] @ u
            assert u @ gd["gram_fluid"][i] @ u <= C["C_P"] ** 2 * A * (1 + 1e-10)
            assert u @ gd["gram_trace"] @ u <= C["C_tr"] ** 2 * A * (1 + 1e-10)
        assert all(v > 0 for v in C.values())

    def test_checks_hold_on_solution(self, solved):
        system, rep, forcing = solved
        assert rep.periodic_residual < 1e-8
        checks = estimate_checks(rep, system, forcing)
        assert [c.name for c in checks] == ["diffusion estimate", "velocity bound"]
        for chk in checks:
            assert chk.passed and chk.lhs > 0.0

    def test_sup_checks_appended(self, solved):
        system, rep, forcing = solved
        consts = EstimateConstants(0.07, 1.0, 50.0, 0.5, 0.9, 0.9, 0.1, 1.0, 0.98)
        checks = estimate_checks(rep, system, forcing, consts)
        assert [c.name for c in checks[2:]] == ["sup-energy estimate", "energy budget"]
        assert checks[3].rhs == 1.0
