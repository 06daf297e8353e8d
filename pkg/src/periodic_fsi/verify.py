"""Reusable verification studies behind the ``verify-*`` commands and the report.

Each function returns plain dictionaries of numbers so that results can be
serialized directly.
"""

import numpy as np

from .assembly import AssembledSystem
from .extension import ExtensionOperator, estimate_report, extend
from .fields import sample_domain
from .geometry import Geometry, surface_identity
from .periodic import periodic_solve, propagate_monodromy
from .profiles import LidProfile
from .shell import KoiterOperator, ShellBasis, ShellBatch

__all__ = [
    "sample_displacement",
    "extension_study",
    "flat_constant_study",
    "surface_identity_study",
    "coercivity_study",
    "scalar_oracle",
    "harmonic_oracle",
]


def sample_displacement(shell_basis, amplitude=0.02, phase=0.0):
    """A smooth admissible displacement snapshot built from the first modes."""
    c = np.zeros(shell_basis.size)
    pattern = np.array([1.0, -0.5, 0.3, 0.2])[: shell_basis.size]
    c[: len(pattern)] = amplitude * pattern * np.cos(phase + np.arange(len(pattern)))
    return shell_basis.field(c)


#: Roundoff floor of the fourth-order difference divergence (step 3e-5).
DIVERGENCE_FLOOR = 5e-9


def extension_study(geom, shell_basis, deltas, levels=(3, 4), floor=DIVERGENCE_FLOOR):
    """Divergence and trace residuals of the extension of every shell mode.

    Parameters
    ----------
    deltas : dict
        Label to displacement field (``None`` for the reference lid).
    levels : sequence of int
        Refinement levels, coarse to fine.  Level ``n`` samples with ``n``
        Gauss points per panel and builds the extension with ``6 n``-point
        antiderivatives.
    floor : float
        Measurement floor of the divergence; a level counts as not
        increasing when its residual is at most ``max(previous, floor)``.

    Returns
    -------
    dict
        ``rows`` with per-(delta, level) maximal divergence residuals, the
        maximal lid trace residual, and the flags ``decreasing``.
    """
    xi = ShellBatch.modes(shell_basis)
    rows = []
    summary = {}
    for label, delta in deltas.items():
        res = []
        for n in levels:
            e = extend(geom, delta, xi, sample=sample_domain(geom, delta, n, n), n_int=6 * n)
            res.append(float(np.max(e.div_residual)))
            rows.append({"delta": label, "level": n, "div_residual": res[-1]})
        trace = float(np.max(ExtensionOperator(geom, delta).lid_trace_residual(xi)))
        summary[label] = {
            "div_residual": res[-1],
            "div_coarse": res[0],
            "decreasing": bool(all(b <= max(a, floor) for a, b in zip(res, res[1:]))),
            "at_floor": bool(res[-1] <= floor),
            "trace_residual": trace,
        }
    return {"rows": rows, "summary": summary}


def flat_constant_study(L_values=(0.1, 0.2, 0.4), n1d=3, modes=(0, 1, 2, 3)):
    """Extension constants of the flat lid for several collar widths."""
    sb = ShellBasis(n1d)
    xi = ShellBatch.modes(sb, list(modes))
    per_L = {}
    for L in L_values:
        C = estimate_report(Geometry(LidProfile("flat"), L=L), None, xi)["C"]
        per_L[float(L)] = {k: float(v) for k, v in C.items()}
    spread = {}
    for key in ("lp_ratio", "w1p_ratio"):
        vals = np.array([c[key] for c in per_L.values()])
        spread[key] = float((vals.max() - vals.min()) / vals.mean())
    return {"per_L": per_L, "relative_spread": spread, "max_spread": max(spread.values())}


def surface_identity_study(geom, eta, f=None):
    """Both sides of the deformed-lid identity for a polynomial weight."""
    f = f or (lambda y: 1.0 + y[:, 0] ** 2 * y[:, 1] - 2.0 * y[:, 1] ** 3)
    lhs, rhs = surface_identity(geom, eta, f)
    return {"lhs": lhs, "rhs": rhs, "difference": abs(lhs - rhs)}


def coercivity_study(n1d_values=(2, 3, 4), n_vectors=100, seed=0, m=1.0, b2=None, b0=0.0):
    """Coercivity constants and a randomized check of ``K(eta) >= c0 |eta|^2_{H2}``."""
    rng = np.random.default_rng(seed)
    out = {}
    for n1d in n1d_values:
        K = KoiterOperator(ShellBasis(n1d), m=m, b2=b2, b0=b0)
        c0, alpha = K.coercivity_constants()
        X = rng.standard_normal((n_vectors, K.basis.size))
        kv = np.einsum("ri,ij,rj->r", X, K.K_matrix, X)
        h2 = np.einsum("ri,ij,rj->r", X, K.gram_h2, X)
        w12 = np.einsum("ri,ij,rj->r", X, K.gram_w12, X)
        slack = 1e-12 * np.abs(kv)
        out[int(n1d)] = {
            "c0": c0,
            "alpha": alpha,
            "violations_h2": int(np.sum(kv < c0 * h2 - slack)),
            "violations_w12": int(np.sum(kv < alpha * w12 - slack)),
            "min_ratio_h2": float(np.min(kv / h2)),
        }
    return out


def scalar_oracle(m=1.0, c=1.0, k=4.0, T=1.0, n_steps=512):
    """Periodic orbit of ``m a'' + c a' + k a = cos(2 pi t / T)`` vs harmonic balance."""
    w = 2.0 * np.pi / T
    sys_ = AssembledSystem.from_matrices(T, m, c, k, lambda t: np.cos(w * t), n_steps)
    direct = periodic_solve(sys_)
    picard = periodic_solve(sys_, method="picard", rho=1.0, tol=1e-13)
    z = 1.0 / (k - m * w * w + 1j * c * w)
    tt = direct.trajectory.times
    exact = np.real(z * np.exp(1j * w * tt))
    exact_dot = np.real(1j * w * z * np.exp(1j * w * tt))
    return {
        "max_error": float(np.max(np.abs(direct.trajectory.a[:, 0] - exact))),
        "max_velocity_error": float(np.max(np.abs(direct.trajectory.a_dot[:, 0] - exact_dot))),
        "method_difference": float(np.max(np.abs(direct.x0 - picard.x0))),
        "picard_iterations": picard.iterations,
        "periodic_residual": direct.periodic_residual,
        "amplitude": float(abs(z)),
        "phase": float(np.angle(z)),
    }


def harmonic_oracle(n_steps=256):
    """``a'' + a = 0`` over one period ``2 pi``: return error and monodromy defect."""
    sys_ = AssembledSystem.from_matrices(2.0 * np.pi, 1.0, 0.0, 1.0, lambda t: 0.0, n_steps)
    Phi, xi = propagate_monodromy(sys_)
    end = Phi @ np.array([1.0, 0.0])
    return {
        "return_error": float(np.linalg.norm(end - [1.0, 0.0])),
        "monodromy_defect": float(np.max(np.abs(Phi - np.eye(2)))),
        "particular_norm": float(np.linalg.norm(xi)),
        "dt": 2.0 * np.pi / n_steps,
    }
