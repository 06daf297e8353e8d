"""Outer fixed point ``delta = eta`` for the coupled periodic problem.

A prescribed displacement ``delta_n = sum b_k X_k`` fixes the moving
domain and the transport field ``v_n = sum b_k' X_k``; the decoupled
periodic solve returns ``a_n``, and the iteration relaxes
``b <- (1 - rho) b + rho a`` until the two trajectories agree in the norm
of the admissible set.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh

from .assembly import assemble, domain_measures
from .basis import DeltaTrajectory, assemble_X
from .errors import BudgetExceeded, LeftAdmissibleSet, NoConvergence
from .estimates import EstimateCheck, EstimateConstants, calibrate_forcing_budget, estimate_checks
from .extension import estimate_report
from .periodic import periodic_solve
from .shell import ShellBatch

__all__ = [
    "Calibration",
    "AdmissibleSet",
    "CouplingState",
    "CoupledProblem",
    "CoupledResult",
    "calibrate",
    "admissibility_check",
    "forcing_budget",
    "outer_iterate",
    "solve_coupled",
]


# ------------------------------------------------------------ calibration
def _span(basis):
    """Shell coefficients of the lid traces of the active members."""
    return basis.omega_coeffs[basis.shell_active]


def sup_constant(basis, K_op, n_grid=97):
    """Smallest ``C`` with ``|eta|_inf <= C |eta|_{H2}`` on the trace span."""
    W = _span(basis)
    G = W @ K_op.gram_h2 @ W.T
    g = np.linspace(0.0, 1.0, n_grid)
    y = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    V = basis.shell_basis.evaluate(y, 0) @ W.T
    Ginv_V = np.linalg.solve(G, V.T)
    return float(np.sqrt(np.max(np.einsum("qi,iq->q", V, Ginv_V))))


def span_coercivity(basis, K_op):
    """``(c0, alpha)``: Koiter coercivity against ``H2`` and ``W12`` on the span."""
    W = _span(basis)
    K = W @ K_op.K_matrix @ W.T
    c0 = eigh(K, W @ K_op.gram_h2 @ W.T, eigvals_only=True)[0]
    alpha = eigh(K, W @ K_op.gram_w12 @ W.T, eigvals_only=True)[0]
    return float(c0), float(alpha)


@dataclass(frozen=True)
class Calibration:
    """Constants of the admissible set and the forcing budget.

    ``M_tilde**2 = c0 L_adm**2 / (2 C_inf**2)`` guarantees that
    ``E <= M_tilde**2`` keeps ``|eta|_inf <= L_adm``; ``C_tilde`` solves
    the budget relation of :func:`calibrate_forcing_budget`.
    """

    c0: float
    alpha: float
    C_inf: float
    L: float
    L_adm: float
    T: float
    theta: float
    c_lk: float
    c_lk12: float
    M_tilde: float
    C_tilde: float

    def constants(self):
        return EstimateConstants(
            C_tilde=self.C_tilde,
            M_tilde=self.M_tilde,
            alpha=self.alpha,
            theta=self.theta,
            c_lk=self.c_lk,
            c_lk12=self.c_lk12,
            L=self.L,
            T=self.T,
            c0=self.c0,
        )

    def as_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def calibrate(basis, K_op, period, theta=0.5, adm_fraction=0.5):
    """Calibrate ``M_tilde`` and ``C_tilde`` for a Galerkin basis.

    Parameters
    ----------
    basis : GalerkinBasis
    K_op : KoiterOperator
    period : float
    theta : float
        Balance parameter in ``(0, 1)``.
    adm_fraction : float
        ``L_adm = adm_fraction * L``; the lifted fields are defined while
        ``|eta|_inf < L / 2``.
    """
    geom = basis.geom
    c0, alpha = span_coercivity(basis, K_op)
    C_inf = sup_constant(basis, K_op)
    L_adm = adm_fraction * geom.L
    M_tilde = float(np.sqrt(c0 * L_adm**2 / (2.0 * C_inf**2)))
    ny = len(basis.y_index)
    rows = estimate_report(geom, None, ShellBatch.modes(basis.shell_basis, range(ny)))["rows"]
    c_lk = max(r["w1p_ratio"] for r in rows if r["p"] == 2.0)
    c_lk12 = max(r["w1p_ratio"] for r in rows if r["p"] != 2.0)
    C_tilde = calibrate_forcing_budget(M_tilde, theta, c_lk, c_lk12, period)
    return Calibration(
        c0, alpha, C_inf, geom.L, L_adm, float(period), theta, c_lk, c_lk12, M_tilde, C_tilde
    )


def forcing_budget(forcing, measures, c_lk):
    """``|f|^2 + c_lk |g|^2 + |P|^2`` (squared ``L2_t L2_x`` norms)."""
    nrm = forcing.norms(measures["volume"], measures["lid_area"], measures["face_area"])
    return float(nrm["f"] ** 2 + c_lk * nrm["g"] ** 2 + nrm["P"] ** 2)


# --------------------------------------------------------- admissible set
@dataclass(frozen=True)
class AdmissibleSet:
    """``|delta|_inf <= L_bound`` and ``alpha |delta|^2_{Linf W12} + |d_t delta|^2_{L2 L2} <= M_tilde^2``."""

    L_bound: float
    M_tilde: float
    alpha: float
    C_tilde: float
    theta: float = 0.5

    @classmethod
    def from_calibration(cls, cal):
        return cls(cal.L_adm, cal.M_tilde, cal.alpha, cal.C_tilde, cal.theta)


def _traj_norms(delta_traj, K_op, geom):
    c, r = delta_traj.coeffs, delta_traj.rates
    dt = delta_traj.period / delta_traj.n_nodes
    w12 = float(np.max(np.einsum("ti,ij,tj->t", c, K_op.gram_w12, c), initial=0.0))
    rate = float(dt * np.einsum("ti,ij,tj->", r, K_op.mass, r))
    return delta_traj.sup_abs(geom), w12, rate


def admissibility_check(delta_traj, adm, K_op, geom):
    """Membership report of a displacement trajectory.

    Also logs the variant ``alpha |delta|_inf <= L`` of the sup bound and
    requires the Hanzawa map to stay orientation preserving.
    """
    sup, w12, rate = _traj_norms(delta_traj, K_op, geom)
    energy = adm.alpha * w12 + rate
    det = delta_traj.min_det(geom)
    return {
        "sup_abs": sup,
        "L_bound": adm.L_bound,
        "L_margin": adm.L_bound - sup,
        "alpha_sup_abs": adm.alpha * sup,
        "alpha_L_margin": adm.L_bound - adm.alpha * sup,
        "energy": energy,
        "energy_bound": adm.M_tilde**2,
        "energy_margin": adm.M_tilde**2 - energy,
        "L_ok": bool(sup <= adm.L_bound),
        "energy_ok": bool(energy <= adm.M_tilde**2),
        "min_det": det,
        "orientation_ok": bool(det > 0.0),
        "member": bool(sup <= adm.L_bound and energy <= adm.M_tilde**2 and det > 0.0),
    }


# ---------------------------------------------------------------- problem
@dataclass
class CoupledProblem:
    """Everything needed to run the outer iteration.

    Parameters
    ----------
    basis : GalerkinBasis
        Without trajectory; one is attached per iterate.
    K_op : KoiterOperator
    forcing : ForcingSpec
    n_nodes : int
        Time nodes ``N`` per period.
    calibration : Calibration
    refine : int
        Time steps per node interval in the periodic solve.
    assemble_options : dict
        Extra keyword arguments for :func:`periodic_fsi.assembly.assemble`.
    """

    basis: object
    K_op: object
    forcing: object
    n_nodes: int
    calibration: Calibration
    refine: int = 1
    resonance_cap: float = 1e8
    assemble_options: dict = field(default_factory=dict)

    @classmethod
    def build(cls, geom, shell_basis, K_op, forcing, n, n_nodes, theta=0.5, **kwargs):
        basis = assemble_X(geom, None, shell_basis, n)
        cal = calibrate(basis, K_op, forcing.period, theta)
        return cls(basis, K_op, forcing, n_nodes, cal, **kwargs)

    @property
    def admissible(self):
        return AdmissibleSet.from_calibration(self.calibration)

    @property
    def dt(self):
        return self.forcing.period / self.n_nodes

    def delta_trajectory(self, b, b_dot):
        return DeltaTrajectory(
            self.basis.shell_basis,
            self.forcing.period,
            self.basis.displacement_coeffs(b),
            self.basis.displacement_coeffs(b_dot),
        )

    def check_budget(self):
        measures = domain_measures(self.basis)
        value = forcing_budget(self.forcing, measures, self.calibration.c_lk)
        if value > self.calibration.C_tilde:
            raise BudgetExceeded(
                f"forcing budget {value:.4e} exceeds C_tilde = {self.calibration.C_tilde:.4e}"
            )
        return value

    def solve_decoupled(self, b, b_dot):
        """Assemble for ``delta = b.X`` with transport ``b'.X`` and solve periodically."""
        traj = self.delta_trajectory(b, b_dot)
        basis = self.basis.with_trajectory(traj)
        v = b_dot if np.any(b_dot) else None
        system = assemble(basis, self.K_op, self.forcing, v_coeffs=v, **self.assemble_options)
        report = periodic_solve(system, refine=self.refine, resonance_cap=self.resonance_cap)
        return system, report


@dataclass
class CouplingState:
    """Current iterate of the outer fixed point.

    ``a, a_dot`` are the nodal values of the periodic solution produced by
    the previous prescription ``b_prev, b_dot_prev``; ``b, b_dot`` is the
    relaxed update that the next iteration prescribes.
    """

    b: np.ndarray
    b_dot: np.ndarray
    a: np.ndarray = None
    a_dot: np.ndarray = None
    residual: float = float("inf")
    rho: float = 1.0
    iteration: int = 0
    history: list = field(default_factory=list)
    b_prev: np.ndarray = None
    b_dot_prev: np.ndarray = None

    @classmethod
    def zero(cls, n_nodes, n, rho=1.0):
        return cls(np.zeros((n_nodes, n)), np.zeros((n_nodes, n)), rho=rho)


def coupling_residual(problem, b, b_dot, a, a_dot):
    """Relative distance of ``(b, b')`` and ``(a, a')`` in the admissible-set metric."""
    K = problem.K_op
    alpha = problem.calibration.alpha
    dt = problem.dt
    W = problem.basis.omega_coeffs

    def norm2(x, xd):
        c, r = x @ W, xd @ W
        w12 = np.max(np.einsum("ti,ij,tj->t", c, K.gram_w12, c), initial=0.0)
        return alpha * w12 + dt * np.einsum("ti,ij,tj->", r, K.mass, r) + dt * np.sum(xd * xd)

    num = np.sqrt(norm2(b - a, b_dot - a_dot))
    den = max(np.sqrt(norm2(a, a_dot)), np.sqrt(norm2(b, b_dot)))
    return float(num / den) if den > 0.0 else 0.0


def outer_iterate(state, problem, rho=None):
    """One relaxed fixed-point update; returns the new state.

    Raises
    ------
    LeftAdmissibleSet
        If the relaxed update violates a bound of the admissible set.
    """
    rho = state.rho if rho is None else rho
    system, report = problem.solve_decoupled(state.b, state.b_dot)
    N = problem.n_nodes
    step = problem.refine
    a = report.trajectory.a[: N * step : step]
    a_dot = report.trajectory.a_dot[: N * step : step]
    res = coupling_residual(problem, state.b, state.b_dot, a, a_dot)
    b_new = (1.0 - rho) * state.b + rho * a
    bd_new = (1.0 - rho) * state.b_dot + rho * a_dot
    adm = admissibility_check(
        problem.delta_trajectory(b_new, bd_new), problem.admissible, problem.K_op, problem.basis.geom
    )
    if not adm["member"]:
        which = "L" if not adm["L_ok"] else ("M" if not adm["energy_ok"] else "orientation")
        raise LeftAdmissibleSet(
            f"update leaves the admissible set ({which} bound; sup|delta| = {adm['sup_abs']:.3e}, "
            f"energy = {adm['energy']:.3e})",
            bound=which,
        )
    entry = {
        "iteration": state.iteration + 1,
        "residual": res,
        "sup_energy": report.sup_energy,
        "periodic_residual": report.periodic_residual,
        "dissipation": report.dissipation,
        "adm_energy_margin": adm["energy_margin"],
        "adm_L_margin": adm["L_margin"],
    }
    new = CouplingState(
        b_new, bd_new, a, a_dot, res, rho, state.iteration + 1, state.history + [entry],
        state.b, state.b_dot,
    )
    new._last = (system, report, adm)
    return new


@dataclass
class CoupledResult:
    """Converged coupled periodic solution with its ledger."""

    state: CouplingState
    system: object
    report: object
    calibration: Calibration
    admissibility: dict
    checks: list
    budget: float

    @property
    def converged(self):
        return self.state.residual < self._tol

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks)

    def ledger(self):
        return {
            "iterations": self.state.iteration,
            "residual": self.state.residual,
            "budget": self.budget,
            "calibration": self.calibration.as_dict(),
            "admissibility": self.admissibility,
            "checks": [c.as_dict() for c in self.checks],
            "history": self.state.history,
            "report": self.report.summary(),
        }


def _order_check(system, refine):
    """Ratio of the maximal energy-balance residuals at ``dt`` and ``dt / 2``."""
    r1 = periodic_solve(system, refine=refine)
    r2 = periodic_solve(system, refine=2 * refine)
    m1 = float(np.max(np.abs(r1.balance_residual)))
    m2 = float(np.max(np.abs(r2.balance_residual)))
    return m1 / m2 if m2 > 0.0 else float("nan"), m1, m2


def final_checks(problem, system, report, adm, periodic_tol=1e-8):
    """Ledger checks of an accepted periodic solution (as ``lhs <= rhs``)."""
    checks = [EstimateCheck("periodicity", report.periodic_residual, periodic_tol)]
    checks += estimate_checks(report, system, problem.forcing, problem.calibration.constants())
    if not problem.forcing.is_zero:
        ratio, _, _ = _order_check(system, problem.refine)
        checks.append(EstimateCheck("energy order lower", 3.0, ratio))
        checks.append(EstimateCheck("energy order upper", ratio, 5.0))
    checks.append(EstimateCheck("admissible sup bound", adm["sup_abs"], adm["L_bound"]))
    checks.append(EstimateCheck("admissible energy bound", adm["energy"], adm["energy_bound"]))
    # det >= 1e-12 written as lhs <= rhs: (1 - det) <= 1 - 1e-12
    checks.append(EstimateCheck("hanzawa orientation", 1.0 - adm["min_det"], 1.0 - 1e-12))
    return checks


def solve_coupled(problem, rho=1.0, tol=1e-6, max_iter=50, state=None, callback=None):
    """Iterate :func:`outer_iterate` until the coupling residual is below ``tol``.

    Raises
    ------
    BudgetExceeded
        If the forcing budget exceeds ``C_tilde`` (checked before solving).
    NoConvergence
        After ``max_iter`` iterations, with the residual history.
    """
    budget = problem.check_budget()
    state = state or CouplingState.zero(problem.n_nodes, problem.basis.n, rho)
    state = replace(state, rho=rho)
    for _ in range(max_iter):
        state = outer_iterate(state, problem, rho)
        if callback is not None:
            callback(state)
        if state.residual < tol:
            break
    else:
        raise NoConvergence(
            f"coupling residual {state.residual:.3e} after {max_iter} iterations",
            history=[h["residual"] for h in state.history],
        )
    system, report, _ = state._last
    # the accepted solution is the last periodic solve; its displacement
    # is the prescribed one up to the converged residual
    adm = admissibility_check(
        problem.delta_trajectory(state.a, state.a_dot), problem.admissible,
        problem.K_op, problem.basis.geom,
    )
    checks = final_checks(problem, system, report, adm)
    result = CoupledResult(state, system, report, problem.calibration, adm, checks, budget)
    result._tol = tol
    return result
