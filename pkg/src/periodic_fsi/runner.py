"""Subcommand implementations: build objects from a config and emit files.

Every command writes its files into the output directory together with a
manifest listing their SHA-256 digests.  Nothing time-dependent is written,
so serial re-runs are byte-identical.
"""

import os
import platform

import numpy as np
import scipy

from . import __version__
from .assembly import assemble
from .basis import DeltaTrajectory, assemble_X
from .coupling import (
    CoupledProblem,
    CouplingState,
    calibrate,
    final_checks,
    solve_coupled,
    _order_check,
)
from .errors import DomainDegeneration
from .estimates import estimate_checks
from .forcing import ForcingSpec, TimeProfile
from .geometry import Geometry
from .io import (
    read_checkpoint,
    write_checkpoint,
    write_csv,
    write_json,
    write_manifest,
)
from .periodic import DisplacementGuard, cauchy_solve, periodic_solve
from .profiles import LidProfile
from .shell import KoiterOperator, ShellBasis, bending_coefficient, membrane_b0
from .state import StateVector
from .verify import (
    coercivity_study,
    extension_study,
    sample_displacement,
    surface_identity_study,
)

__all__ = ["COMMANDS", "run", "environment_stamp", "Context"]


def environment_stamp(threads=1):
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mode": "serial" if threads == 1 else f"parallel ({threads} threads)",
    }


# ------------------------------------------------------------- builders
def build_geometry(cfg, profile=None, amplitude=None):
    g = cfg.geometry
    prof = LidProfile(
        g.profile if profile is None else profile,
        g.amplitude if amplitude is None else amplitude,
        g.radius,
    )
    return Geometry(prof, L=g.L, n_y=g.n_y, n_z=g.n_z, n_collar=g.n_collar, n_surface=g.n_surface)


def build_shell(cfg, geom):
    s = cfg.shell
    sb = ShellBasis(s.n1d)
    if s.m is not None:
        m = s.m
    elif s.thickness is not None:
        m = bending_coefficient(s.thickness, s.lame_lambda, s.lame_mu)
    else:
        m = 1.0
    b0 = s.b0
    if s.membrane:
        b0 = membrane_b0(geom, s.thickness or 1.0, s.lame_lambda, s.lame_mu)
    return sb, KoiterOperator(sb, m=m, b2=np.asarray(s.b2, float), b0=b0)


def build_profile(pc, base_dir, scale=1.0):
    if pc.kind == "table":
        if pc.csv is not None:
            path = pc.csv if os.path.isabs(pc.csv) else os.path.join(base_dir, pc.csv)
            data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
            times, values = data[:, 0], data[:, 1]
        else:
            times, values = np.asarray(pc.times, float), np.asarray(pc.values, float)
        return TimeProfile("table", table=(tuple(times), tuple(values * scale)))
    return TimeProfile(pc.kind, pc.amplitude * scale, pc.harmonic, pc.phase)


def build_forcing(cfg, scale=1.0):
    fc = cfg.forcing
    mk = lambda pc: build_profile(pc, cfg.base_dir, scale)  # noqa: E731
    return ForcingSpec(
        cfg.time.period, mk(fc.f), tuple(fc.f_direction), mk(fc.g), mk(fc.p_in), mk(fc.p_out)
    )


class Context:
    """Lazily built objects shared by the commands of one run."""

    def __init__(self, cfg, out_dir=None, threads=1):
        self.cfg = cfg
        self.out = out_dir
        self.threads = threads
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
        self.geom = build_geometry(cfg)
        self.shell_basis, self.K_op = build_shell(cfg, self.geom)
        self._basis = None
        self._cal = None
        self.files = []

    @property
    def hash(self):
        return self.cfg.hash()

    @property
    def basis(self):
        if self._basis is None:
            b = self.cfg.basis
            self._basis = assemble_X(
                self.geom, None, self.shell_basis, b.n, b.n_y, b.n_z, b.cond_max
            )
        return self._basis

    @property
    def calibration(self):
        if self._cal is None:
            self._cal = calibrate(
                self.basis, self.K_op, self.cfg.time.period,
                self.cfg.coupling.theta, self.cfg.coupling.adm_fraction,
            )
        return self._cal

    def forcing(self):
        scale = self.calibration.C_tilde if self.cfg.forcing.relative_to_budget else 1.0
        return build_forcing(self.cfg, scale)

    def assemble_options(self):
        p = self.cfg.physics
        return {
            "viscosity": p.viscosity,
            "fluid_density": p.fluid_density,
            "shell_density": p.shell_density,
            "boundary_term": self.cfg.solver.boundary_term,
        }

    def path(self, name):
        p = os.path.join(self.out, name)
        self.files.append(p)
        return p

    def manifest(self, command, extra=None):
        info = {"environment": environment_stamp(self.threads)}
        info.update(extra or {})
        return write_manifest(self.out, command, self.files, self.hash, info)


# ------------------------------------------------------------- commands
def cmd_verify_geometry(ctx):
    g = ctx.geom
    eta = sample_displacement(ctx.shell_basis)
    y, _ = g.surface_quadrature()
    c = g.curvature_at(y)
    d = g.lid(y)
    J = g.j_eta_weight(y, eta.value(y))
    write_csv(
        ctx.path("lid_samples.csv"),
        ["y1", "y2", "h", "kappa1", "kappa2", "J_eta"],
        np.column_stack([y, d.h, c.kappa1, c.kappa2, J]),
    )
    result = {
        "kappa_max": c.kappa_max,
        "collar_width": g.L,
        "volume_reference": g.volume(None),
        "volume_graph_reference": g.graph_volume(None),
        "volume_deformed": g.volume(eta),
        "volume_graph_deformed": g.graph_volume(eta),
        "surface_identity": surface_identity_study(g, eta),
        "min_hanzawa_det": g.check_orientation(eta),
    }
    write_json(ctx.path("geometry.json"), result)
    return result


def cmd_shell_spectrum(ctx):
    K = ctx.K_op
    spec = K.spectrum()
    write_csv(
        ctx.path("shell_spectrum.csv"),
        ["index", "eigenvalue", "beam_frequency2"],
        np.column_stack([np.arange(len(spec)), spec, ctx.shell_basis.frequencies2]),
    )
    s = ctx.cfg.shell
    study = coercivity_study(
        (s.n1d,), seed=ctx.cfg.seed, m=K.m, b2=K.b2, b0=s.b0 if not s.membrane else 0.0
    )
    result = {"m": K.m, "coercivity": study[s.n1d], "eigenvalues": spec}
    write_json(ctx.path("shell.json"), result)
    return result


def cmd_verify_extension(ctx):
    sb = ctx.shell_basis
    deltas = {"reference": None, "moving_t0": sample_displacement(sb, phase=0.0),
              "moving_t1": sample_displacement(sb, phase=0.5 * np.pi)}
    n = ctx.cfg.geometry.n_y
    study = extension_study(ctx.geom, sb, deltas, levels=(n, n + 1))
    write_csv(
        ctx.path("extension_residuals.csv"),
        ["delta_index", "level", "div_residual"],
        [[list(deltas).index(r["delta"]), r["level"], r["div_residual"]] for r in study["rows"]],
    )
    write_json(ctx.path("extension.json"), study)
    return study


def cmd_dump_basis(ctx):
    b = ctx.basis
    bs = b.with_trajectory(DeltaTrajectory.zero(ctx.shell_basis, ctx.cfg.time.period, 1)).node(0)
    result = {
        "n": b.n,
        "labels": [f"{k}{i}" for k, i in b.labels],
        "gram_condition": b.gram_cond,
        "transform": b.transform,
        "omega_coeffs": b.omega_coeffs,
        "divergence_residual": b.divergence_residual(bs),
        "trace_gram_defect": float(np.max(np.abs(b.trace_gram() - np.eye(b.n)))),
    }
    write_json(ctx.path("basis.json"), result)
    return result


def _prescribed(ctx, amplitude):
    """Prescribed displacement ``b(t) = A sin(2 pi t / T)`` on the first lid member."""
    N, T = ctx.cfg.time.nodes, ctx.cfg.time.period
    t = np.arange(N) * (T / N)
    k = ctx.basis.y_index[0]
    b = np.zeros((N, ctx.basis.n))
    bd = np.zeros_like(b)
    b[:, k] = amplitude * np.sin(2 * np.pi * t / T)
    bd[:, k] = amplitude * 2 * np.pi / T * np.cos(2 * np.pi * t / T)
    traj = DeltaTrajectory(
        ctx.shell_basis, T, ctx.basis.displacement_coeffs(b), ctx.basis.displacement_coeffs(bd)
    )
    return traj, (bd if amplitude else None)


def _system(ctx):
    traj, v = _prescribed(ctx, ctx.cfg.solver.delta_amplitude)
    basis = ctx.basis.with_trajectory(traj)
    return assemble(basis, ctx.K_op, ctx.forcing(), v_coeffs=v, **ctx.assemble_options())


def cmd_assemble_only(ctx):
    system = _system(ctx)
    result = {"nodes": system.n_nodes, "n": system.n, "active": system.active,
              "spectra": system.spectra()}
    write_json(ctx.path("assembly.json"), result)
    return result


def _trajectory_rows(system, report):
    tr = report.trajectory
    bal = np.append(report.balance_residual, np.nan)
    return np.column_stack([tr.times, tr.a, tr.a_dot, report.energy, bal])


def _trajectory_header(n):
    return (["t"] + [f"a{k}" for k in range(n)] + [f"a_dot{k}" for k in range(n)]
            + ["energy", "balance_residual"])


def cmd_solve_periodic(ctx):
    cfg = ctx.cfg
    system = _system(ctx)
    sv = cfg.solver
    report = periodic_solve(
        system, method=sv.method, refine=cfg.time.refine, boundary_term=sv.boundary_term,
        rho=sv.rho, tol=sv.tol, max_iter=sv.max_iter, resonance_cap=sv.resonance_cap,
    )
    forcing = ctx.forcing()
    checks = estimate_checks(report, system, forcing)
    ratio, m1, m2 = _order_check(system, cfg.time.refine)
    write_csv(ctx.path("periodic_trajectory.csv"), _trajectory_header(system.n),
              _trajectory_rows(system, report))
    result = {
        "summary": report.summary(),
        "checks": [c.as_dict() for c in checks],
        "energy_order": {"ratio": ratio, "residual_dt": m1, "residual_dt_half": m2},
        "x0": report.x0,
        "monodromy_eigenvalues_abs": np.sort(np.abs(np.linalg.eigvals(report.monodromy))),
    }
    write_json(ctx.path("periodic.json"), result)
    write_checkpoint(
        ctx.path("periodic.ckpt"), "periodic",
        {"x0": report.x0, "a": report.trajectory.a, "a_dot": report.trajectory.a_dot},
        ctx.hash,
    )
    return result


def cmd_solve_cauchy(ctx):
    cfg = ctx.cfg
    ca = cfg.cauchy
    system = _system(ctx)
    n = system.n
    a0 = np.zeros(n) if ca.a0 is None else np.asarray(ca.a0, float)
    ad0 = np.zeros(n) if ca.a_dot0 is None else np.asarray(ca.a_dot0, float)
    guard = DisplacementGuard.for_basis(ctx.basis, ca.guard_fraction * cfg.geometry.L)
    result = {"horizon": ca.horizon, "guard_bound": guard.bound}
    try:
        rep = cauchy_solve(system, StateVector(a0, ad0), ca.horizon, ca.refine, guard)
    except DomainDegeneration as exc:
        result.update(tripped=True, trip_time=exc.trip_time, message=str(exc))
        write_json(ctx.path("cauchy.json"), result)
        raise
    write_csv(
        ctx.path("cauchy_trajectory.csv"), _trajectory_header(n),
        np.column_stack([rep.trajectory.times, rep.trajectory.a, rep.trajectory.a_dot,
                         rep.energy, np.append(rep.balance_residual, np.nan)]),
    )
    result.update(
        tripped=False,
        energy_nonincreasing=rep.energy_nonincreasing,
        max_energy_increase=rep.max_energy_increase,
        energy_initial=float(rep.energy[0]),
        energy_final=float(rep.energy[-1]),
        balance_residual_max=float(np.max(np.abs(rep.balance_residual), initial=0.0)),
    )
    write_json(ctx.path("cauchy.json"), result)
    return result


def coupled_problem(ctx):
    cfg = ctx.cfg
    return CoupledProblem(
        ctx.basis, ctx.K_op, ctx.forcing(), cfg.time.nodes, ctx.calibration,
        refine=cfg.time.refine, resonance_cap=cfg.solver.resonance_cap,
        assemble_options=ctx.assemble_options(),
    )


def cmd_solve_coupled(ctx, resume=False):
    cfg = ctx.cfg
    cp = cfg.coupling
    problem = coupled_problem(ctx)
    ckpt = os.path.join(ctx.out, "coupled_state.ckpt")
    # the iteration budget may change between an interrupted run and its resumption
    key = cfg.with_section("coupling", max_iter=0).hash()
    state = None
    if resume and os.path.exists(ckpt):
        header, arr = read_checkpoint(ckpt, "coupled", key)
        meta = header["meta"]
        state = CouplingState(arr["b"], arr["b_dot"], residual=float(meta["residual"]),
                              rho=cp.rho, iteration=int(meta["iteration"]),
                              history=meta["history"], b_prev=arr["b_prev"],
                              b_dot_prev=arr["b_dot_prev"])

    def save(s):
        write_checkpoint(
            ckpt, "coupled",
            {"b": s.b, "b_dot": s.b_dot, "b_prev": s.b_prev, "b_dot_prev": s.b_dot_prev},
            key, {"iteration": s.iteration, "residual": s.residual, "history": s.history},
        )

    ctx.files.append(ckpt)
    if state is not None and state.residual < cp.tol:
        result = _finish_converged(problem, state, cp)
    else:
        remaining = cp.max_iter - (state.iteration if state else 0)
        result = solve_coupled(problem, rho=cp.rho, tol=cp.tol, max_iter=max(remaining, 1),
                               state=state, callback=save)
    hist = result.state.history
    write_csv(
        ctx.path("coupled_history.csv"),
        ["iteration", "residual", "sup_energy", "periodic_residual", "dissipation",
         "adm_energy_margin", "adm_L_margin"],
        [[h[k] for k in ("iteration", "residual", "sup_energy", "periodic_residual",
                         "dissipation", "adm_energy_margin", "adm_L_margin")] for h in hist],
    )
    ledger = result.ledger()
    ledger["converged"] = bool(result.state.residual < cp.tol)
    ledger["all_passed"] = result.all_passed
    ledger["lid"] = {"profile": cfg.geometry.profile, "amplitude": cfg.geometry.amplitude}
    ledger["nodes"] = cfg.time.nodes
    ledger["n"] = cfg.basis.n
    write_json(ctx.path("coupled.json"), ledger)
    write_csv(ctx.path("coupled_trajectory.csv"), _trajectory_header(result.system.n),
              _trajectory_rows(result.system, result.report))
    return ledger


def _finish_converged(problem, state, cp):
    """Re-solve the last accepted prescription to rebuild the final ledger."""
    from .coupling import CoupledResult, admissibility_check

    system, report = problem.solve_decoupled(state.b_prev, state.b_dot_prev)
    N, r = problem.n_nodes, problem.refine
    a, a_dot = report.trajectory.a[: N * r : r], report.trajectory.a_dot[: N * r : r]
    state.a, state.a_dot = a, a_dot
    adm = admissibility_check(problem.delta_trajectory(a, a_dot), problem.admissible,
                              problem.K_op, problem.basis.geom)
    checks = final_checks(problem, system, report, adm)
    res = CoupledResult(state, system, report, problem.calibration, adm, checks,
                        problem.check_budget())
    res._tol = cp.tol
    return res


def cmd_report(ctx):
    from .report import build_report

    rep = build_report(ctx)
    write_json(ctx.path("report.json"), rep.as_dict())
    return rep.as_dict()


COMMANDS = {
    "verify-geometry": cmd_verify_geometry,
    "shell-spectrum": cmd_shell_spectrum,
    "verify-extension": cmd_verify_extension,
    "dump-basis": cmd_dump_basis,
    "assemble-only": cmd_assemble_only,
    "solve-periodic": cmd_solve_periodic,
    "solve-cauchy": cmd_solve_cauchy,
    "solve-coupled": cmd_solve_coupled,
    "report": cmd_report,
}


def run(cfg, command, out_dir, threads=1, resume=False):
    """Run one subcommand; returns its result dictionary."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    ctx = Context(cfg, out_dir, threads)
    try:
        if command == "solve-coupled":
            return COMMANDS[command](ctx, resume=resume)
        return COMMANDS[command](ctx)
    finally:
        ctx.files = [f for f in ctx.files if os.path.exists(f)]
        ctx.manifest(command)
