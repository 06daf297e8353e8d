"""Time integration, monodromy and periodic orbits of the Galerkin system.

The system ``M(t) a'' + C(t) a' + K a = F(t)`` is advanced by the implicit
midpoint rule.  On a step ``[t0, t0 + dt]`` the interpolated mass matrices
at both ends give ``M_m = (M0 + M1)/2`` and the secant slope
``M' = (M1 - M0)/dt``; the damping is ``C_m + M'/2``.  With
``p_m = (p0 + p1)/2`` and ``a1 = a0 + dt p_m`` one linear solve

``(2 M_m + dt C_m + dt^2/2 K) p_m = 2 M_m p0 + dt (F_m - K a0)``

advances the state, and the discrete energy satisfies
``(E1 - E0)/dt = p_m.F_m - p_m.A_m p_m + (1/8) dp.M'.dp`` with
``dp = p1 - p0``, so the balance residual is second order.

Periodic orbits are fixed points of the period map on the reduced state
``x = (a[active], a')`` (see :mod:`periodic_fsi.state`).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import dissipation, energy_balance_residual, energy_series
from .errors import (
    DomainDegeneration,
    NearResonance,
    PicardStagnation,
    SingularStageMatrix,
)
from .state import Trajectory

__all__ = [
    "Propagator",
    "PeriodicSolveReport",
    "CauchyReport",
    "step",
    "propagate_monodromy",
    "periodic_solve",
    "cauchy_solve",
    "DisplacementGuard",
]


@dataclass
class _Stage:
    lu: tuple
    Mm: np.ndarray
    Fm: np.ndarray
    Q: np.ndarray = None


class Propagator:
    """Midpoint stepper over one period with cached stage factorizations.

    Parameters
    ----------
    system : AssembledSystem
    refine : int
        Steps per node interval; the step is ``T / (N * refine)``.
    boundary_term : bool
        Add the quadratic boundary load ``Q(p_m, p_m)`` (requires
        ``system.boundary``); each step then iterates on ``p_m``.
    """

    def __init__(self, system, refine=1, boundary_term=False):
        if refine < 1:
            raise ValueError("refine must be a positive integer")
        self.system = system
        self.refine = int(refine)
        self.steps = system.n_nodes * self.refine
        self.dt = system.period / self.steps
        self.boundary_term = bool(boundary_term)
        if self.boundary_term and system.boundary is None:
            raise ValueError("system was assembled without the boundary tensor")
        self.active = system.active
        self._stages = {}

    def stage(self, j):
        """Stage data of step ``j`` (periodic in ``j``)."""
        j = j % self.steps
        if j not in self._stages:
            sysm, dt = self.system, self.dt
            t0 = j * dt
            M0, M1 = sysm.mass_at(t0), sysm.mass_at(t0 + dt)
            Mm = 0.5 * (M0 + M1)
            Cm = sysm.core_at(t0 + 0.5 * dt) + 0.5 * (M1 - M0) / dt
            S = 2.0 * Mm + dt * Cm + 0.5 * dt * dt * sysm.stiffness
            try:
                lu = sla.lu_factor(S, check_finite=True)
            except (ValueError, sla.LinAlgError) as exc:
                raise SingularStageMatrix(f"stage matrix at t={t0:.4g}: {exc}") from exc
            if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
                raise SingularStageMatrix(f"singular stage matrix at t={t0:.4g}")
            Q = sysm.interp("boundary", t0 + 0.5 * dt) if self.boundary_term else None
            self._stages[j] = _Stage(lu, Mm, sysm.interp("loads", t0 + 0.5 * dt), Q)
        return self._stages[j]

    def step(self, j, a, p, forced=True, inner_tol=1e-13, inner_max=50):
        """Advance ``(a, p)`` over step ``j``; arrays may carry extra columns."""
        st = self.stage(j)
        dt, K = self.dt, self.system.stiffness
        rhs = 2.0 * st.Mm @ p - dt * (K @ a)
        if forced:
            rhs = rhs + dt * (st.Fm if p.ndim == 1 else st.Fm[:, None])
        pm = sla.lu_solve(st.lu, rhs)
        if st.Q is not None and forced:
            for _ in range(inner_max):
                extra = np.einsum("kij,i...,j...->k...", st.Q, pm, pm)
                new = sla.lu_solve(st.lu, rhs + dt * extra)
                done = np.max(np.abs(new - pm)) <= inner_tol * max(1.0, np.max(np.abs(new)))
                pm = new
                if done:
                    break
        return a + dt * pm, 2.0 * pm - p

    def run(self, a0, p0, forced=True, steps=None, start=0, record=False):
        """Integrate from step ``start`` for ``steps`` steps."""
        steps = self.steps if steps is None else steps
        a, p = np.array(a0, dtype=float), np.array(p0, dtype=float)
        if record:
            A, P = [a.copy()], [p.copy()]
        for j in range(start, start + steps):
            a, p = self.step(j, a, p, forced)
            if record:
                A.append(a.copy())
                P.append(p.copy())
        if record:
            times = (start + np.arange(steps + 1)) * self.dt
            return Trajectory(times, np.array(A), np.array(P))
        return a, p

    # ---------------------------------------------------- reduced state
    def unpack(self, x):
        n = self.system.n
        k = len(self.active)
        a = np.zeros((n,) + x.shape[1:])
        a[self.active] = x[:k]
        return a, x[k:]

    def pack(self, a, p):
        return np.concatenate([a[self.active], p], axis=0)

    def period_map(self, x):
        """``P(x)``: reduced state after one forced period."""
        a, p = self.unpack(np.asarray(x, dtype=float))
        return self.pack(*self.run(a, p, forced=True))


def step(system, x, t, dt):
    """One implicit midpoint step of the full state ``x = (a, a')``.

    ``t`` and ``dt`` must be compatible with the node grid of ``system``
    (``dt = T / (N * r)`` for an integer ``r`` and ``t`` a multiple of it).
    """
    refine = int(round(system.period / (system.n_nodes * dt)))
    if refine < 1 or not np.isclose(refine * system.n_nodes * dt, system.period):
        raise ValueError("dt must divide the node spacing of the system")
    prop = Propagator(system, refine)
    j = int(round(t / prop.dt))
    n = system.n
    a1, p1 = prop.step(j, np.asarray(x[:n], float), np.asarray(x[n:], float))
    return np.concatenate([a1, p1])


def propagate_monodromy(system, refine=1, propagator=None):
    """Monodromy ``Phi(T)`` on the reduced state and the forced endpoint.

    Returns
    -------
    Phi : ndarray (m, m)
    particular : ndarray (m,)
        Endpoint of the forced run from rest.
    """
    prop = propagator or Propagator(system, refine)
    m = len(prop.active) + system.n
    a, p = prop.unpack(np.eye(m))
    a, p = prop.run(a, p, forced=False)
    Phi = prop.pack(a, p)
    a, p = prop.run(np.zeros(system.n), np.zeros(system.n), forced=True)
    return Phi, prop.pack(a, p)


@dataclass
class PeriodicSolveReport:
    """Outcome of a periodic solve; see :func:`periodic_solve`."""

    method: str
    x0: np.ndarray
    monodromy: np.ndarray
    particular: np.ndarray
    trajectory: Trajectory
    periodic_residual: float
    iterations: int
    energy: np.ndarray
    sup_energy: float
    dissipation: float
    balance_residual: np.ndarray
    resolvent_norm: float = float("nan")
    history: list = field(default_factory=list)

    @property
    def energy_drift(self):
        """``E_n(T) - E_n(0)``; zero at a periodic orbit."""
        return float(self.energy[-1] - self.energy[0])

    def summary(self):
        return {
            "method": self.method,
            "periodic_residual": self.periodic_residual,
            "iterations": self.iterations,
            "sup_energy": self.sup_energy,
            "dissipation": self.dissipation,
            "energy_drift": self.energy_drift,
            "balance_residual_max": float(np.max(np.abs(self.balance_residual), initial=0.0)),
            "resolvent_norm": self.resolvent_norm,
        }


def _periodic_residual(prop, traj):
    x0 = prop.pack(traj.a[0], traj.a_dot[0])
    xT = prop.pack(traj.a[-1], traj.a_dot[-1])
    xs = np.concatenate([traj.a[:, prop.active], traj.a_dot], axis=1)
    return float(np.linalg.norm(xT - x0) / max(1.0, np.max(np.abs(xs))))


def periodic_solve(
    system,
    method="monodromy",
    refine=1,
    boundary_term=False,
    rho=0.5,
    tol=1e-10,
    max_iter=5000,
    resonance_cap=1e8,
    x_init=None,
):
    """Find the ``T``-periodic orbit of the Galerkin system.

    Parameters
    ----------
    method : {"monodromy", "picard"}
        ``"monodromy"`` solves ``(I - Phi) x0 = xi_p`` directly;
        ``"picard"`` iterates ``x0 <- (1 - rho) x0 + rho P(x0)``.
    boundary_term : bool
        Include the quadratic boundary load (Picard only, since the period
        map is then no longer affine).
    tol : float
        Picard stopping tolerance on ``|P(x) - x| / max(1, |x|_inf)``.
    resonance_cap : float
        Largest admissible ``|(I - Phi)^{-1}|_2``.

    Raises
    ------
    NearResonance
        If ``Phi`` has an eigenvalue too close to one.
    PicardStagnation
        If the damped iteration does not reach ``tol``.
    """
    if method not in ("monodromy", "picard"):
        raise ValueError("method must be 'monodromy' or 'picard'")
    if boundary_term and method == "monodromy":
        raise ValueError("the boundary load makes the period map nonlinear; use 'picard'")
    prop = Propagator(system, refine, boundary_term)
    Phi, xi = propagate_monodromy(system, propagator=prop)
    m = Phi.shape[0]
    I_Phi = np.eye(m) - Phi
    sv = np.linalg.svd(I_Phi, compute_uv=False)
    resolvent = float(np.inf if sv[-1] == 0.0 else 1.0 / sv[-1])
    if resolvent > resonance_cap:
        raise NearResonance(
            f"|(I - Phi)^-1| = {resolvent:.3e} exceeds {resonance_cap:.1e}; "
            "monodromy has an eigenvalue near 1"
        )
    history = []
    if method == "monodromy":
        x0 = np.linalg.solve(I_Phi, xi)
        iterations = 0
    else:
        x0 = np.zeros(m) if x_init is None else np.array(x_init, dtype=float)
        best = np.inf
        stall = 0
        for it in range(1, max_iter + 1):
            Px = prop.period_map(x0)
            res = float(np.linalg.norm(Px - x0) / max(1.0, np.max(np.abs(x0))))
            history.append(res)
            if res < tol:
                break
            x0 = (1.0 - rho) * x0 + rho * Px
            if res < 0.999 * best:
                best, stall = res, 0
            else:
                stall += 1
                if stall > 50:
                    raise PicardStagnation(f"damped iteration stalled at residual {res:.3e}")
        else:
            raise PicardStagnation(f"no convergence in {max_iter} iterations (residual {res:.3e})")
        iterations = it
    a0, p0 = prop.unpack(x0)
    traj = prop.run(a0, p0, forced=True, record=True)
    E = energy_series(system, traj)
    extra = None
    if boundary_term:
        extra = lambda t, p: np.einsum("kij,i,j->k", system.interp("boundary", t), p, p)
    bal = energy_balance_residual(system, traj, extra)
    return PeriodicSolveReport(
        method=method,
        x0=x0,
        monodromy=Phi,
        particular=xi,
        trajectory=traj,
        periodic_residual=_periodic_residual(prop, traj),
        iterations=iterations,
        energy=E,
        sup_energy=float(np.max(E)),
        dissipation=dissipation(system, traj),
        balance_residual=bal,
        resolvent_norm=resolvent,
        history=history,
    )


# ------------------------------------------------------------------ Cauchy
@dataclass(frozen=True)
class DisplacementGuard:
    """Trips when the shell displacement leaves the representable range.

    ``eta = sum a_k X_k`` is evaluated on the lid grid; the guard trips when
    ``max |eta| >= bound`` (by default half the collar width, the range in
    which the lifted fields are defined), or when the Hanzawa map of
    ``eta`` folds.
    """

    geom: object
    trace_values: np.ndarray
    bound: float
    shell_basis: object = None
    omega_coeffs: np.ndarray = None

    @classmethod
    def for_basis(cls, basis, bound=None):
        y, _ = basis.geom.surface_quadrature()
        tv = basis.shell_basis.evaluate(y, 0) @ basis.omega_coeffs.T
        b = 0.5 * basis.geom.L if bound is None else float(bound)
        return cls(basis.geom, tv, b, basis.shell_basis, basis.omega_coeffs)

    def sup(self, a):
        return float(np.max(np.abs(self.trace_values @ a)))

    def tripped(self, a):
        if self.sup(a) >= self.bound:
            return True
        if self.shell_basis is not None:
            eta = self.shell_basis.field(np.asarray(a) @ self.omega_coeffs)
            X, _ = self.geom.volume_quadrature(2, 2, 2)
            _, _, det = self.geom.shift(eta, X)
            return bool(np.min(det) <= 0.0)
        return False


@dataclass
class CauchyReport:
    trajectory: Trajectory
    energy: np.ndarray
    balance_residual: np.ndarray
    max_energy_increase: float
    energy_nonincreasing: bool


def cauchy_solve(system, x0, horizon, refine=1, guard=None, slack=None):
    """Initial-value integration with an energy ledger and a domain guard.

    Parameters
    ----------
    x0 : StateVector
    horizon : float
        Final time; the (periodic) system is extended beyond one period.
    guard : DisplacementGuard, optional
    slack : float, optional
        Allowed energy increase per step for the monotonicity verdict of
        unforced runs; defaults to ``10 dt^2`` times the initial energy
        scale.

    Raises
    ------
    DomainDegeneration
        If the guard trips; ``trip_time`` is the first offending time.
    """
    prop = Propagator(system, refine)
    steps = int(np.ceil(horizon / prop.dt - 1e-9))
    a, p = np.array(x0.a, dtype=float), np.array(x0.a_dot, dtype=float)
    A, P = [a.copy()], [p.copy()]
    for j in range(steps):
        a, p = prop.step(j, a, p)
        A.append(a.copy())
        P.append(p.copy())
        if guard is not None and guard.tripped(a):
            raise DomainDegeneration(
                f"shell displacement left the admissible range at t={(j + 1) * prop.dt:.4g}",
                trip_time=(j + 1) * prop.dt,
            )
    traj = Trajectory(np.arange(steps + 1) * prop.dt, np.array(A), np.array(P))
    E = energy_series(system, traj)
    bal = energy_balance_residual(system, traj)
    dE = np.diff(E)
    if slack is None:
        slack = 10.0 * prop.dt**2 * max(float(E[0]), 1e-300)
    power = np.array(
        [
            pm @ system.interp("loads", t)
            for pm, t in zip(traj.midpoint_velocities(), 0.5 * (traj.times[1:] + traj.times[:-1]))
        ]
    )
    excess = dE - prop.dt * np.maximum(power, 0.0)
    return CauchyReport(
        trajectory=traj,
        energy=E,
        balance_residual=bal,
        max_energy_increase=float(np.max(excess, initial=0.0)),
        energy_nonincreasing=bool(np.all(excess <= slack)),
    )
