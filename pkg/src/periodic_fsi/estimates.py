"""A priori estimates evaluated on computed periodic solutions.

Every check reports both sides of an inequality and the margin
``rhs - lhs``; failures are data, never exceptions.

Constants are the sharp discrete ones of the Galerkin space at hand:

* ``C_P``: ``|u|_{L2} <= C_P |grad u|_{L2}`` (fluid Poincare constant),
* ``C_tr``: ``|u|_{L2(omega)} <= C_tr |grad u|_{L2}`` for the lid trace,
* ``C_Gamma``: the same for the face functionals ``P -> int P u.nu``.

The pressure datum is uniform on each face, so ``|int_face P u.nu| <=
|P|_{L2(face)} |flux| / sqrt(|face|)`` and the face constant is taken on the
flux functionals.  Each constant is the largest generalized eigenvalue
against the viscous matrix over all time nodes.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.linalg import eigh

__all__ = [
    "EstimateCheck",
    "EstimateConstants",
    "system_constants",
    "diffusion_check",
    "velocity_check",
    "sup_energy_checks",
    "estimate_checks",
    "calibrate_forcing_budget",
]

_TOL = 1e-12


@dataclass(frozen=True)
class EstimateCheck:
    """One inequality ``lhs <= rhs`` with its margin."""

    name: str
    lhs: float
    rhs: float

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def passed(self):
        return bool(self.margin >= -_TOL * max(1.0, abs(self.rhs), abs(self.lhs)))

    def as_dict(self):
        d = asdict(self)
        d.update(lhs=float(self.lhs), rhs=float(self.rhs))
        d.update(margin=float(self.margin), passed=self.passed)
        return d


@dataclass(frozen=True)
class EstimateConstants:
    """Constants entering the energy bounds.

    Attributes
    ----------
    C_tilde : float
        Forcing budget.
    M_tilde : float
        Energy budget (``M_tilde**2`` bounds ``sup E``).
    alpha, c0 : float
        Koiter coercivity against ``W^{1,2}`` and ``H^2``.
    theta : float
        Balance parameter in ``(0, 1)``.
    c_lk, c_lk12 : float
        Extension constants for the ``L2`` and the mixed-exponent bounds.
    L, T : float
        Collar width and period.
    c : float
        Generic constant of the bounds (one in the normalized setting).
    """

    C_tilde: float
    M_tilde: float
    alpha: float
    theta: float
    c_lk: float
    c_lk12: float
    L: float
    T: float
    c0: float
    c: float = 1.0

    def sup_energy_bound(self):
        """Right-hand side of the sup-energy estimate (needs ``T > theta``)."""
        th, T, Ct = self.theta, self.T, self.C_tilde
        if T <= th:
            return float("nan")
        ext = Ct**2 * self.c_lk**2 + Ct * self.c_lk12
        return (
            self.c / (th * (T - th)) / th * ext
            + (T * T + T + 1.0) / (T * (T - th)) * Ct
            + th / (T - th) * self.M_tilde**2
        )


def calibrate_forcing_budget(M_tilde, theta, c_lk, c_lk12, T, c=1.0):
    """Positive root ``C`` of the budget relation.

    ``c / (theta^2 (1 - theta)) (c_lk^2 C^2 + c_lk12 C)
    + (T^2 + T + 1) / (T (1 - theta)) C = M_tilde^2``.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    q = c / (theta**2 * (1.0 - theta))
    a = q * c_lk**2
    b = q * c_lk12 + (T * T + T + 1.0) / (T * (1.0 - theta))
    m2 = M_tilde**2
    if a == 0.0:
        return m2 / b
    # stable form of the positive root
    return 2.0 * m2 / (b + np.sqrt(b * b + 4.0 * a * m2))


def _gen_max(G, A):
    return float(eigh(0.5 * (G + G.T), A, eigvals_only=True)[-1])


def system_constants(system):
    """Discrete Poincare and trace constants of an assembled system."""
    gd = system.geometry_data
    fl, fr, area = gd["flux_left"], gd["flux_right"], gd["face_area"]
    cp = ctr = cg = 0.0
    for i in range(system.n_nodes):
        A = system.visc[i]
        cp = max(cp, _gen_max(gd["gram_fluid"][i], A))
        ctr = max(ctr, _gen_max(gd["gram_trace"], A))
        G = (np.outer(fl[i], fl[i]) + np.outer(fr[i], fr[i])) / area
        cg = max(cg, _gen_max(G, A))
    return {"C_P": np.sqrt(cp), "C_tr": np.sqrt(ctr), "C_Gamma": np.sqrt(cg)}


def _forcing_side(system, forcing, consts):
    gd = system.geometry_data
    nrm = forcing.norms(gd["volume"], gd["lid_area"], gd["face_area"])
    return consts["C_P"] * nrm["f"] + consts["C_tr"] * nrm["g"] + consts["C_Gamma"] * nrm["P"]


def diffusion_check(system, report, forcing, consts=None):
    """``int int |grad u|^2 <= (C_P |f| + C_tr |g| + C_Gamma |P|)^2``."""
    consts = consts or system_constants(system)
    s = _forcing_side(system, forcing, consts)
    return EstimateCheck("diffusion estimate", report.dissipation, s * s)


def velocity_check(system, report, forcing, consts=None):
    """``|u|^2_{L2 W12} <= (1 + C_P^2) (forcing side)^2``."""
    consts = consts or system_constants(system)
    traj = report.trajectory
    pm = traj.midpoint_velocities()
    tm = 0.5 * (traj.times[1:] + traj.times[:-1])
    gram = system.geometry_data["gram_fluid"]
    l2 = sum(p @ system.interp(gram, t) @ p for p, t in zip(pm, tm)) * traj.dt
    s = _forcing_side(system, forcing, consts)
    return EstimateCheck(
        "velocity bound", float(l2 + report.dissipation), (1.0 + consts["C_P"] ** 2) * s * s
    )


def sup_energy_checks(report, constants):
    """Sup-energy estimate and the calibrated bound ``sup E <= M_tilde^2``."""
    return [
        EstimateCheck("sup-energy estimate", report.sup_energy, constants.sup_energy_bound()),
        EstimateCheck("energy budget", report.sup_energy, constants.M_tilde**2),
    ]


def estimate_checks(report, system, forcing, constants=None):
    """All estimate checks of a converged periodic solution.

    Returns
    -------
    list of EstimateCheck
        Diffusion and velocity bounds, plus the sup-energy bounds when
        ``constants`` is given.
    """
    consts = system_constants(system)
    checks = [
        diffusion_check(system, report, forcing, consts),
        velocity_check(system, report, forcing, consts),
    ]
    if constants is not None:
        checks += sup_energy_checks(report, constants)
    return checks
