"""Verification report: one pass/fail record per acceptance check.

Each record carries a short descriptive anchor naming the estimate or
identity it tests, both sides of the inequality it evaluates, the margin
and a details dictionary.  The check functions take explicit parameters so
they can be run at other resolutions than the configured ones.
"""

import dataclasses
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .config import ForcingConfig, ProfileConfig
from .errors import DomainDegeneration, FSIError
from .forcing import ForcingSpec, TimeProfile
from .geometry import Geometry
from .io import file_digest
from .periodic import DisplacementGuard, cauchy_solve
from .profiles import LidProfile
from .state import StateVector
from .verify import (
    coercivity_study,
    extension_study,
    flat_constant_study,
    sample_displacement,
    scalar_oracle,
    surface_identity_study,
)

__all__ = [
    "CheckRecord",
    "VerificationReport",
    "CHECKS",
    "build_report",
    "check_extension",
    "check_flat_constants",
    "check_surface_identity",
    "check_coercivity",
    "check_scalar_oracle",
    "decoupled_run",
    "check_periodicity",
    "check_energy_order",
    "check_diffusion",
    "coupled_run",
    "check_coupled_flat",
    "check_coupled_curved",
    "check_cauchy",
    "check_determinism",
]

#: (name, anchor) of the acceptance checks, in order.
CHECKS = [
    ("solenoidal extension", "divergence-free extension"),
    ("flat-case constants", "flat extension constants"),
    ("surface identity", "surface change of variables"),
    ("koiter coercivity", "coercivity of the Koiter form"),
    ("scalar oracle", "forced damped oscillator"),
    ("periodicity", "period-map fixed point"),
    ("energy balance order", "discrete energy balance"),
    ("diffusion estimate", "diffusion estimate"),
    ("coupled flat run", "coupled fixed point"),
    ("coupled curved run", "curvature-dependent budget"),
    ("cauchy mode", "initial-value energy inequality"),
    ("determinism", "reproducibility"),
]
_ANCHOR = dict(CHECKS)


@dataclass
class CheckRecord:
    """``lhs <= rhs`` (or the stated relation) with pass flag and details."""

    name: str
    lhs: float
    rhs: float
    passed: bool
    details: dict = field(default_factory=dict)

    @property
    def anchor(self):
        return _ANCHOR.get(self.name, self.name)

    @property
    def margin(self):
        return float(self.rhs - self.lhs)

    def as_dict(self):
        return {
            "name": self.name,
            "anchor": self.anchor,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "margin": self.margin,
            "passed": bool(self.passed),
            "details": self.details,
        }

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: lhs={self.lhs:.4e} rhs={self.rhs:.4e} ({self.anchor})"


@dataclass
class VerificationReport:
    records: list
    environment: dict
    config_hash: str

    @property
    def all_passed(self):
        return all(r.passed for r in self.records)

    def as_dict(self):
        return {
            "config_hash": self.config_hash,
            "environment": self.environment,
            "all_passed": self.all_passed,
            "checks": [r.as_dict() for r in self.records],
        }


def _failed(name, exc):
    return CheckRecord(name, float("nan"), float("nan"), False,
                       {"error": type(exc).__name__, "message": str(exc)})


# ------------------------------------------------------------ checks 1-5
def check_extension(L=0.2, amplitude=0.1, n1d=3, levels=(3, 4), tol_div=1e-6, tol_trace=1e-8):
    sb_geoms = {
        "flat": Geometry(LidProfile("flat"), L=L),
        "curved": Geometry(LidProfile("sin2", amplitude), L=L),
    }
    from .shell import ShellBasis

    sb = ShellBasis(n1d)
    deltas = {"reference": None, "moving_t0": sample_displacement(sb),
              "moving_t1": sample_displacement(sb, phase=0.5 * np.pi)}
    details, worst_div, worst_trace, decreasing = {}, 0.0, 0.0, True
    for name, geom in sb_geoms.items():
        summ = extension_study(geom, sb, deltas, levels)["summary"]
        details[name] = summ
        worst_div = max(worst_div, *(s["div_residual"] for s in summ.values()))
        worst_trace = max(worst_trace, *(s["trace_residual"] for s in summ.values()))
        decreasing &= all(s["decreasing"] for s in summ.values())
    details.update(worst_trace=worst_trace, decreasing=decreasing, trace_tol=tol_trace)
    ok = worst_div < tol_div and worst_trace < tol_trace and decreasing
    return CheckRecord("solenoidal extension", worst_div, tol_div, ok, details)


def check_flat_constants(L_values=(0.1, 0.2, 0.4), tol=0.05):
    st = flat_constant_study(L_values)
    return CheckRecord("flat-case constants", st["max_spread"], tol, st["max_spread"] < tol, st)


def check_surface_identity(L=0.2, amplitude=0.1, n1d=3, tol=1e-6):
    from .shell import ShellBasis

    geom = Geometry(LidProfile("sin2", amplitude), L=L)
    st = surface_identity_study(geom, sample_displacement(ShellBasis(n1d), amplitude=0.03))
    return CheckRecord("surface identity", st["difference"], tol, st["difference"] < tol, st)


def check_coercivity(seed=0, n1d_values=(2, 3, 4), n_vectors=100):
    st = coercivity_study(n1d_values, n_vectors, seed)
    violations = sum(v["violations_h2"] for v in st.values())
    positive = all(v["c0"] > 0 and v["alpha"] > 0 for v in st.values())
    return CheckRecord("koiter coercivity", violations, 0.0, violations == 0 and positive,
                       {str(k): v for k, v in st.items()})


def check_scalar_oracle(n_steps=512, tol=1e-4, tol_methods=1e-6):
    st = scalar_oracle(n_steps=n_steps)
    ok = st["max_error"] < tol and st["method_difference"] < tol_methods
    return CheckRecord("scalar oracle", st["max_error"], tol, ok, st)


# ------------------------------------------------------------ checks 6-8
def decoupled_run(cfg):
    """Decoupled periodic solve on the prescribed moving lid of ``cfg``."""
    from .coupling import _order_check
    from .estimates import estimate_checks
    from .periodic import periodic_solve
    from .runner import Context, _system

    ctx = Context(cfg)
    system = _system(ctx)
    report = periodic_solve(system, refine=cfg.time.refine, resonance_cap=cfg.solver.resonance_cap)
    checks = estimate_checks(report, system, ctx.forcing())
    ratio, m1, m2 = _order_check(system, cfg.time.refine)
    return {"system": system, "report": report, "checks": checks,
            "order": {"ratio": ratio, "residual_dt": m1, "residual_dt_half": m2}}


def check_periodicity(run, coupled=(), tol=1e-8):
    vals = [run["report"].periodic_residual]
    vals += [c["report"]["periodic_residual"] for c in coupled if c]
    worst = max(vals)
    return CheckRecord("periodicity", worst, tol, worst < tol, {"residuals": vals})


def check_energy_order(run, low=3.0, high=5.0):
    r = run["order"]["ratio"]
    return CheckRecord("energy balance order", low, r, bool(low <= r <= high),
                       dict(run["order"], high=high))


def check_diffusion(run, coupled=()):
    margins = [c.margin for c in run["checks"] if c.name == "diffusion estimate"]
    for led in coupled:
        if led:
            margins += [c["margin"] for c in led["checks"] if c["name"] == "diffusion estimate"]
    d = next(c for c in run["checks"] if c.name == "diffusion estimate")
    worst = min(margins)
    return CheckRecord("diffusion estimate", d.lhs, d.rhs, worst >= 0.0,
                       {"margins": margins, "worst_margin": worst})


# ----------------------------------------------------------- checks 9-10
def coupled_run(cfg, profile, amplitude, fraction=0.01, nodes=None, n=None):
    """Coupled run with ``P = fraction * C_tilde * sin(2 pi t / T)`` on the inflow face."""
    from .runner import Context, coupled_problem
    from .coupling import solve_coupled

    geo = dataclasses.replace(cfg.geometry, profile=profile, amplitude=amplitude)
    forcing = ForcingConfig(p_in=ProfileConfig("sin", fraction), relative_to_budget=True)
    c = cfg.replace(geometry=geo, forcing=forcing)
    c = c.with_section("time", nodes=nodes or cfg.time.nodes)
    c = c.with_section("basis", n=n or cfg.basis.n)
    ctx = Context(c)
    problem = coupled_problem(ctx)
    res = solve_coupled(problem, rho=c.coupling.rho, tol=c.coupling.tol,
                        max_iter=c.coupling.max_iter)
    led = res.ledger()
    led["converged"] = bool(res.state.residual < c.coupling.tol)
    led["all_passed"] = res.all_passed
    residuals = [h["residual"] for h in res.state.history]
    led["monotone"] = bool(all(b <= a for a, b in zip(residuals, residuals[1:])))
    return led


def _coupled_ok(led):
    return bool(led and led["converged"] and led["all_passed"])


def check_coupled_flat(led, max_iter=50, tol=1e-6):
    ok = _coupled_ok(led) and led["iterations"] <= max_iter
    return CheckRecord("coupled flat run", led["residual"], tol, ok,
                       {"iterations": led["iterations"], "calibration": led["calibration"],
                        "checks": led["checks"], "history": led["history"]})


def check_coupled_curved(led_curved, led_flat, tol=1e-6):
    ct_c = led_curved["calibration"]["C_tilde"]
    ct_f = led_flat["calibration"]["C_tilde"]
    ok = _coupled_ok(led_curved) and ct_c < ct_f
    return CheckRecord("coupled curved run", ct_c, ct_f, ok,
                       {"residual": led_curved["residual"], "iterations": led_curved["iterations"],
                        "C_tilde_curved": ct_c, "C_tilde_flat": ct_f,
                        "checks": led_curved["checks"]})


# ----------------------------------------------------------- checks 11-12
def check_cauchy(cfg, horizon=1.0, refine=8, nodes=16):
    """Unforced decay from nonzero data, then an over-forced run that must trip."""
    from .assembly import assemble
    from .basis import DeltaTrajectory
    from .runner import Context

    ctx = Context(cfg)
    basis = ctx.basis.with_trajectory(
        DeltaTrajectory.zero(ctx.shell_basis, cfg.time.period, nodes)
    )
    guard = DisplacementGuard.for_basis(ctx.basis, cfg.cauchy.guard_fraction * cfg.geometry.L)
    unforced = assemble(basis, ctx.K_op, ForcingSpec(cfg.time.period))
    n = unforced.n
    k = ctx.basis.y_index[0]
    e = np.zeros(n)
    e[k] = 1.0
    a0 = 0.25 * guard.bound / guard.sup(e) * e
    ad0 = np.zeros(n)
    ad0[ctx.basis.labels.index(("Z", 0))] = 0.1
    rep = cauchy_solve(unforced, StateVector(a0, ad0), horizon, refine, guard)
    # static response to a unit shell load fixes the over-forcing level
    act = unforced.active
    a_s = np.zeros(n)
    a_s[act] = np.linalg.solve(
        unforced.stiffness[np.ix_(act, act)], unforced.geometry_data["int_trace"][act]
    )
    g_over = 4.0 * guard.bound / guard.sup(a_s)
    forced = assemble(basis, ctx.K_op,
                      ForcingSpec(cfg.time.period, g_profile=TimeProfile("const", g_over)))
    trip = None
    try:
        cauchy_solve(forced, StateVector.zeros(n), horizon, refine, guard)
    except DomainDegeneration as exc:
        trip = exc.trip_time
    ok = rep.energy_nonincreasing and trip is not None and np.isfinite(trip)
    return CheckRecord(
        "cauchy mode", rep.max_energy_increase, 10.0 * (horizon / (nodes * refine)) ** 2 * rep.energy[0],
        bool(ok),
        {"energy_initial": float(rep.energy[0]), "energy_final": float(rep.energy[-1]),
         "energy_nonincreasing": rep.energy_nonincreasing, "g_over": g_over,
         "trip_time": trip},
    )


def check_determinism(cfg, commands=("shell-spectrum", "solve-periodic")):
    """Run commands twice in fresh directories and compare every file digest."""
    from .runner import run

    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for rep in range(2):
            out = os.path.join(tmp, f"run{rep}")
            for cmd in commands:
                run(cfg, cmd, out)
            digests.append({f: file_digest(os.path.join(out, f)) for f in sorted(os.listdir(out))})
    differing = sorted(f for f in digests[0] if digests[0][f] != digests[1].get(f))
    ok = not differing and digests[0].keys() == digests[1].keys()
    return CheckRecord("determinism", len(differing), 0.0, bool(ok),
                       {"files": sorted(digests[0]), "differing": differing})


# ------------------------------------------------------------ assembly
def build_report(ctx, coupled_flat=None, coupled_curved=None):
    """Evaluate all checks for the run context ``ctx``.

    Coupled ledgers may be passed in (for instance from a previous
    ``solve-coupled``); otherwise both coupled runs are computed here.
    """
    from .runner import environment_stamp

    cfg = ctx.cfg
    L = cfg.geometry.L
    records = []

    def guarded(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FSIError as exc:
            return _failed(name, exc)

    records.append(guarded("solenoidal extension", check_extension, L=L, n1d=cfg.shell.n1d,
                           levels=(cfg.geometry.n_y, cfg.geometry.n_y + 1),
                           tol_div=cfg.tolerances.divergence, tol_trace=cfg.tolerances.trace))
    records.append(guarded("flat-case constants", check_flat_constants))
    records.append(guarded("surface identity", check_surface_identity, L=L, n1d=cfg.shell.n1d,
                           tol=cfg.tolerances.surface))
    records.append(guarded("koiter coercivity", check_coercivity, seed=cfg.seed))
    records.append(guarded("scalar oracle", check_scalar_oracle))
    try:
        run_ = decoupled_run(cfg)
    except FSIError as exc:
        run_ = None
        for name in ("periodicity", "energy balance order", "diffusion estimate"):
            records.append(_failed(name, exc))
    ledgers = {}
    for key, given, (prof, amp) in (("flat", coupled_flat, ("flat", 0.0)),
                                    ("curved", coupled_curved, ("sin2", 0.05))):
        if given is None:
            try:
                given = coupled_run(cfg, prof, amp)
            except FSIError as exc:
                given = {"error": type(exc).__name__, "message": str(exc)}
        ledgers[key] = given
    good = [led for led in ledgers.values() if "checks" in led]
    if run_ is not None:
        records.append(check_periodicity(run_, good, cfg.tolerances.periodic))
        records.append(check_energy_order(run_, cfg.tolerances.balance_ratio_low,
                                          cfg.tolerances.balance_ratio_high))
        records.append(check_diffusion(run_, good))
    flat, curved = ledgers["flat"], ledgers["curved"]
    if "checks" in flat:
        records.append(check_coupled_flat(flat, cfg.coupling.max_iter, cfg.coupling.tol))
    else:
        records.append(CheckRecord("coupled flat run", float("nan"), cfg.coupling.tol, False, flat))
    if "checks" in curved and "checks" in flat:
        records.append(check_coupled_curved(curved, flat, cfg.coupling.tol))
    else:
        records.append(CheckRecord("coupled curved run", float("nan"), float("nan"), False,
                                   {"flat": flat.get("message"), "curved": curved.get("message")}))
    records.append(guarded("cauchy mode", check_cauchy, cfg))
    records.append(guarded("determinism", check_determinism, cfg))
    order = [name for name, _ in CHECKS]
    records.sort(key=lambda r: order.index(r.name))
    return VerificationReport(records, environment_stamp(ctx.threads), cfg.hash())
