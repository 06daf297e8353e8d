"""Solenoidal extension of shell data into the moving fluid domain.

Fields are built in chart coordinates ``X' = (y, zeta)`` of ``Omega_delta``
(``0 < zeta < 1 + delta(y)``) in flux form: a chart field ``Fh`` stands for
the physical field ``grad Theta Fh / det Theta``, whose divergence is
``div_X Fh / det Theta``.  Solenoidality is therefore an exact statement
about ``div_X Fh``.

For a shell field ``xi`` let ``q_s = W xi J(y, delta)`` (``W`` the lid area
factor, ``J`` the normal volume factor).  The raw lift carries ``q_s``
straight down the collar, ``Fbar = (0, 0, sigma_L(zeta - 1) q_s)``, which
equals ``xi nu`` on the moving lid and is divergence free wherever
``sigma_L = 1``.  The pressure faces receive the compensating datum
``-c psi_p nu`` with ``c = int_omega xi J_delta dA`` so that the total
boundary flux vanishes.  The solenoidal field subtracts from ``Fbar`` a
correction supported away from the lid plateau:

``Fh = (sigma' R, sigma q) + c Phi`` with ``q = q_s - c mu1 mu2``,
``div_y R = -q`` (an explicit right inverse built from iterated
antiderivatives) and ``Phi`` a fixed divergence-free channel field carrying
unit flux from the lid footprint ``mu1 mu2`` to the pressure faces.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CollarViolation, IncompatibleFlux
from .fields import (
    DomainSample,
    divergence,
    evaluate_with_gradient,
    piola_from_chart,
    sample_domain,
)
from .geometry import ZERO_FIELD, cutoff
from .profiles import PolyBump, smoothstep
from .quadrature import composite, cumulative, gauss, tensor2

__all__ = [
    "ExtensionOperator",
    "ExtensionField",
    "extend",
    "raw_extension",
    "bogovskii_correct",
    "estimate_report",
    "plateau_sample",
]


@dataclass(frozen=True)
class ExtensionField:
    """Extension of a batch of shell fields sampled on ``Omega_delta``.

    Arrays have shape (nq, k, 3); residuals are per shell field.
    """

    sample: DomainSample
    raw: np.ndarray
    correction: np.ndarray
    total: np.ndarray
    div_residual: np.ndarray
    raw_plateau_div: np.ndarray


class ExtensionOperator:
    """Extension operator for a fixed displacement ``delta``.

    Parameters
    ----------
    geom : Geometry
    delta : object with ``value`` and ``grad``, optional
        Prescribed lid displacement; ``None`` means zero.
    variant : {"exact", "frozen"}
        ``"exact"`` transports flux with the exact normal volume factor
        ``J(delta)/J(s)``.  ``"frozen"`` uses the exponential factor
        ``exp((delta - s) div nu)`` with ``div nu`` evaluated at the point;
        it matches on the lid but is only approximately solenoidal on
        curved lids and is kept for comparison.
    n_int : int
        Gauss points for the antiderivatives in the lid directions.
    """

    def __init__(self, geom, delta=None, variant="exact", n_int=24, check=True):
        if variant not in ("exact", "frozen"):
            raise ValueError("variant must be 'exact' or 'frozen'")
        self.geom = geom
        self.delta = ZERO_FIELD if delta is None else delta
        self.variant = variant
        self.n_int = n_int
        self._t_nodes, self._t_weights = composite(np.linspace(0.0, 1.0, 3), n_int // 2)
        self.bump = geom.bump
        if check:
            y, _ = geom.surface_quadrature()
            sup = float(np.max(np.abs(self.delta.value(y)), initial=0.0))
            if sup > 0.5 * geom.L:
                raise CollarViolation(
                    f"|delta|_inf = {sup:.4g} exceeds L/2 = {0.5 * geom.L:.4g}"
                )

    # ----------------------------------------------------------- lid flux
    def lid_flux_density(self, y, xi):
        """``q_s = W xi J(delta)`` at parameter points; shape (..., k)."""
        d = self.geom.lid(y)
        dv = self.delta.value(y)
        return (d.W * d.jacobian_factor(dv))[..., None] * xi.value(y)

    def flux(self, xi):
        """``c = int_omega xi J_delta dA`` for each field of the batch."""
        return self._column_integrals(np.array([1.0]), xi)[1][0]

    def _column_integrals(self, y2, xi):
        """``Qs(y2) = int_0^1 q_s dt`` and ``Qcum(y2) = int_0^y2 Qs``."""
        tn, tw = self._t_nodes, self._t_weights

        def qs_rows(s):
            pts = np.stack(np.broadcast_arrays(tn, s[..., None]), axis=-1)
            return np.einsum("...tk,t->...k", self.lid_flux_density(pts, xi), tw)

        Qs = qs_rows(y2)
        Qcum = cumulative(qs_rows, y2, n=self.n_int)
        return Qs, Qcum

    def _row_integral(self, y, xi):
        """``I1(y) = int_0^{y1} q_s(t, y2) dt``."""

        def f(t):
            pts = np.stack(np.broadcast_arrays(t, y[:, 1][:, None]), axis=-1)
            return self.lid_flux_density(pts, xi)

        return cumulative(f, y[:, 0], n=self.n_int)

    def _potentials(self, y, xi):
        yu, inv = np.unique(y, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        y2u, inv2 = np.unique(yu[:, 1], return_inverse=True)
        inv2 = inv2.reshape(-1)
        I1 = self._row_integral(yu, xi)
        Qs, Qcum = self._column_integrals(y2u, xi)
        c = self.flux(xi)
        b = self.bump
        y1, y2 = yu[:, 0], yu[:, 1]
        R1 = -I1 + b.cumulative(y1)[:, None] * Qs[inv2]
        R2 = -b(y1)[:, None] * (Qcum[inv2] - c * b.cumulative(y2)[:, None])
        qs = self.lid_flux_density(yu, xi)
        q = qs - c * (b(y1) * b(y2))[:, None]
        return R1[inv], R2[inv], q[inv], qs[inv], c

    # --------------------------------------------------------- channel
    def _chi(self, zeta, deriv=0):
        za, zb = self.geom.z_a, self.geom.z_b
        return smoothstep((zeta - za) / (zb - za), deriv) / (zb - za) ** deriv

    def channel(self, X):
        """Divergence-free chart field carrying unit flux from lid to faces."""
        b = self.bump
        y1, y2, z = X[..., 0], X[..., 1], X[..., 2]
        out = np.zeros(X.shape)
        out[..., 0] = self._chi(z, 1) * (0.5 - b.cumulative(y1)) * b(y2)
        out[..., 2] = self._chi(z) * b(y1) * b(y2)
        return out

    def face_profile(self, y2, z):
        """``psi_p`` on each pressure face; integrates to 1/2 per face."""
        return 0.5 * self._chi(z, 1) * self.bump(y2)

    # ------------------------------------------------------ chart fields
    def chart_field(self, Xs, xi):
        """Solenoidal chart field at chart points of ``Omega_delta``; (n, k, 3)."""
        Xs = np.asarray(Xs, dtype=float)
        L = self.geom.L
        s = Xs[:, 2] - 1.0
        sig, dsig = cutoff(L, s), cutoff(L, s, 1)
        R1, R2, q, _, c = self._potentials(Xs[:, :2], xi)
        out = np.empty(q.shape + (3,))
        out[..., 0] = dsig[:, None] * R1
        out[..., 1] = dsig[:, None] * R2
        out[..., 2] = sig[:, None] * q
        out += c[None, :, None] * self.channel(Xs)[:, None, :]
        return out

    def raw_chart_field(self, Xs, xi):
        """Raw lift ``Fbar`` in chart form; (n, k, 3)."""
        Xs = np.asarray(Xs, dtype=float)
        geom = self.geom
        L = geom.L
        y, s = Xs[:, :2], Xs[:, 2] - 1.0
        sig = cutoff(L, s)
        if self.variant == "exact":
            qs = self.lid_flux_density(y, xi)
        else:
            d = geom.lid(y)
            Js = d.jacobian_factor(s)
            div_nu = (-d.hsum + 2.0 * s * d.gauss) / Js
            dv = self.delta.value(y)
            fac = d.W * Js * np.exp((dv - s) * div_nu)
            qs = fac[:, None] * xi.value(y)
        c = self.flux(xi)
        out = np.zeros(qs.shape + (3,))
        out[..., 2] = sig[:, None] * qs
        lift = self.face_profile(y[:, 1], Xs[:, 2]) * (
            cutoff(L, y[:, 0]) - cutoff(L, 1.0 - y[:, 0])
        )
        out[..., 0] = c[None, :] * lift[:, None]
        return out

    def physical_at_reference(self, X, xi, raw=False):
        """Physical field at ``Theta(Psi(X))`` for reference points ``X``."""
        Xs, _, _ = self.geom.shift(self.delta, X)
        Fh = self.raw_chart_field(Xs, xi) if raw else self.chart_field(Xs, xi)
        return piola_from_chart(self.geom, Xs, Fh)

    def physical_at_chart(self, Xs, xi, raw=False):
        Fh = self.raw_chart_field(Xs, xi) if raw else self.chart_field(Xs, xi)
        return piola_from_chart(self.geom, Xs, Fh)

    def __call__(self, x, xi):
        """Evaluate the solenoidal extension at physical points of ``Omega_delta``."""
        Xs = self.geom.chart_inverse(np.asarray(x, dtype=float))
        return self.physical_at_chart(Xs, xi)

    # ------------------------------------------------------------ checks
    def lid_trace_residual(self, xi, n=None):
        """Max ``|F(phi_delta(y)) - xi(y) nu(y)|`` at lid collocation points.

        The lid point is recovered by tubular projection of the deformed lid
        point, as an independent check of the chart bookkeeping.
        """
        geom = self.geom
        y, _ = geom.surface_quadrature(n)
        x = geom.lid_point(y, self.delta.value(y))
        tc = geom.tubular_project(x)
        Xs = np.concatenate([tc.y, (1.0 + tc.s)[:, None]], axis=1)
        F = self.physical_at_chart(Xs, xi)
        target = xi.value(y)[..., None] * geom.lid(y).nu[:, None, :]
        return np.max(np.abs(F - target), axis=(0, 2))

    def face_fluxes(self, xi, raw=False, n=None):
        """Outward fluxes through the faces ``y1 = 0`` and ``y1 = 1``."""
        geom = self.geom
        pts, w = geom.face_quadrature(n)
        out = []
        for y1, sign in ((0.0, -1.0), (1.0, 1.0)):
            Xs = np.column_stack([np.full(len(w), y1), pts])
            F = self.physical_at_chart(Xs, xi, raw=raw)
            _, jac, _ = geom.chart(Xs)
            area = np.linalg.norm(np.cross(jac[:, :, 1], jac[:, :, 2]), axis=-1)
            out.append(np.einsum("q,qk->k", w * area, sign * F[..., 0]))
        return out[0], out[1]

    def lid_flux(self, xi, n=None):
        """``int_omega xi J_delta W dy`` by direct surface quadrature."""
        y, w = self.geom.surface_quadrature(n)
        return np.einsum("q,qk->k", w, self.lid_flux_density(y, xi))


def raw_extension(geom, delta, xi, variant="exact", sample=None):
    """Sample the raw lift ``Fbar`` on ``Omega_delta``; returns values, grads."""
    op = ExtensionOperator(geom, delta, variant)
    sample = sample or sample_domain(geom, delta)
    return evaluate_with_gradient(sample, lambda X: op.physical_at_reference(X, xi, raw=True))


def extend(geom, delta, xi, sample=None, variant="exact", n_int=24, fd_step=3e-5, fd_order=4):
    """Extend a batch of shell fields and measure divergence residuals.

    Parameters
    ----------
    n_int : int
        Gauss points of the antiderivatives inside the construction; this
        is the discretization that controls the true divergence error.
    fd_step, fd_order : float, int
        Difference stencil used to measure the divergence.  Its roundoff
        floor is about ``1e-9`` with the defaults; second order stencils
        with small steps sit near ``1e-7``.
    """
    op = ExtensionOperator(geom, delta, variant, n_int=n_int)
    sample = sample or sample_domain(geom, delta)

    def measure(fn):
        return evaluate_with_gradient(sample, fn, h=fd_step, order=fd_order)

    total, g_total = measure(lambda X: op.physical_at_reference(X, xi))
    raw, g_raw = measure(lambda X: op.physical_at_reference(X, xi, raw=True))
    div = divergence(g_total)
    div_res = np.sqrt(np.einsum("q,qk->k", sample.w, div**2))
    plateau = np.abs(sample.Xs[:, 2] - 1.0) < 0.5 * geom.L
    div_raw = divergence(g_raw)[plateau]
    raw_res = np.sqrt(np.einsum("q,qk->k", sample.w[plateau], div_raw**2))
    return ExtensionField(sample, raw, raw - total, total, div_res, raw_res)


# ---------------------------------------------------------------- Bogovskii
def bogovskii_correct(geom, defect, n=30, tol=1e-8):
    """Right inverse of the divergence on ``Omega`` minus the lid plateau.

    The region is the chart box ``(0,1)^2 x (0, 1 - L/2)``.  With bumps
    ``rho1, rho2`` of unit mass the field

    ``v1 = int_0^x1 (D - rho1 D1)``, ``v2 = rho1 int_0^x2 (D1 - rho2 D12)``,
    ``v3 = rho1 rho2 int_0^x3 D12``

    (``D1``, ``D12`` the partial averages of ``D``) satisfies
    ``div v = D`` exactly and vanishes on the box boundary whenever ``D``
    vanishes there and has zero mean.

    Parameters
    ----------
    geom : Geometry
    defect : callable
        Physical divergence defect ``D(x)`` on points (m, 3).
    n : int
        Gauss points per nested integral.

    Returns
    -------
    callable
        ``v(x)`` at physical points (m, 3).

    Raises
    ------
    IncompatibleFlux
        If the defect does not integrate to zero.
    """
    H = 1.0 - 0.5 * geom.L
    rho = PolyBump(0.0, 1.0)

    def Dhat(X):
        shape = X.shape[:-1]
        x, _, det = geom.chart(X.reshape(-1, 3))
        return (defect(x) * det).reshape(shape)

    tq, tw = gauss(n, 0.0, 1.0)
    zq, zw = gauss(n, 0.0, H)
    grid, gw = tensor2(tq, tw, tq, tw)
    full = np.column_stack([np.repeat(grid, n, axis=0), np.tile(zq, len(gw))])
    wfull = np.repeat(gw, n) * np.tile(zw, len(gw))
    vals = Dhat(full)
    total = float(np.sum(wfull * vals))
    scale = float(np.sum(wfull * np.abs(vals))) + 1e-300
    if abs(total) > tol * max(scale, 1.0):
        raise IncompatibleFlux(f"defect integrates to {total:.3e}")

    def D1(x2, x3):
        pts = np.stack(np.broadcast_arrays(tq, x2[..., None], x3[..., None]), -1)
        return Dhat(pts) @ tw

    def D12_direct(x3):
        shape = x3.shape + (n,)
        return D1(np.broadcast_to(tq, shape), np.broadcast_to(x3[..., None], shape)) @ tw

    # the doubly averaged defect depends on x3 only: interpolate it once
    D12 = np.polynomial.Chebyshev.interpolate(D12_direct, 4 * n, domain=[0.0, H])
    D12_int = D12.integ(lbnd=0.0)

    def v_chunk(X):
        x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
        d1 = D1(x2, x3)
        d12 = D12(x3)
        v1 = cumulative(
            lambda t: Dhat(np.stack(np.broadcast_arrays(t, x2[:, None], x3[:, None]), -1)),
            x1, n,
        ) - rho.cumulative(x1) * d1
        v2 = rho(x1) * (
            cumulative(lambda s: D1(s, np.broadcast_to(x3[:, None], s.shape)), x2, n)
            - rho.cumulative(x2) * d12
        )
        v3 = rho(x1) * rho(x2) * D12_int(x3)
        return np.stack([v1, v2, v3], -1)

    def v_chart(X, chunk=512):
        X = np.asarray(X, dtype=float)
        return np.concatenate(
            [v_chunk(X[i:i + chunk]) for i in range(0, len(X), chunk)], axis=0
        )

    def v(x):
        X = geom.chart_inverse(np.asarray(x, dtype=float))
        vh = v_chart(X)
        inside = X[:, 2] < H
        vh[~inside] = 0.0
        return piola_from_chart(geom, X, vh)

    v.chart = v_chart
    return v


# ------------------------------------------------------------- estimates
def plateau_sample(geom, delta=None, n_y=None, n_z=None):
    """Quadrature of ``S_{L/2} cap Omega_delta`` in chart points.

    The returned sample uses chart points directly (``X == Xs``), so field
    functions passed to :func:`evaluate_with_gradient` receive chart points.
    """
    delta = ZERO_FIELD if delta is None else delta
    n_y = n_y or geom.n_y
    n_z = n_z or max(geom.n_z, 4)
    y, wy = geom.surface_quadrature(n_y)
    dv = delta.value(y)
    zq, zw = gauss(n_z, 0.0, 1.0)
    lo = 1.0 - 0.5 * geom.L
    hi = 1.0 + dv
    zeta = lo + (hi - lo)[:, None] * zq[None, :]
    Xs = np.column_stack([np.repeat(y, n_z, axis=0), zeta.ravel()])
    w = (wy[:, None] * (hi - lo)[:, None] * zw[None, :]).ravel()
    x, jac, det = geom.chart(Xs)
    return DomainSample(Xs, Xs, x, w * det, jac, np.linalg.inv(jac))


def _lp(w, vals, p):
    return float(np.sum(w * np.abs(vals) ** p) ** (1.0 / p))


def estimate_report(geom, delta, xi, p_values=(1.5, 2.0), delta_rate=None, n_y=None):
    """Empirical extension constants over a batch of shell fields.

    Norms of the extension are taken on the lid plateau
    ``S_{L/2} cap Omega_delta`` and divided by ``(L/2)^{1/p}`` so that they
    are measured per unit collar depth.

    Parameters
    ----------
    delta_rate : object with ``value``, optional
        Time derivative of ``delta``; enables the time-derivative ratio,
        computed by central differences of the Eulerian field at fixed
        physical points.

    Returns
    -------
    dict
        ``rows`` (one dict per field and exponent) and ``C`` (maxima).
    """
    delta = ZERO_FIELD if delta is None else delta
    op = ExtensionOperator(geom, delta)
    smp = plateau_sample(geom, delta, n_y=n_y)
    vals, grads = evaluate_with_gradient(smp, lambda Xs: op.physical_at_chart(Xs, xi))
    y, wy = geom.surface_quadrature(n_y)
    dA = wy * geom.lid(y).W
    xv, xg = xi.value(y), xi.grad(y)
    dg = np.linalg.norm(delta.grad(y), axis=-1)
    depth = 0.5 * geom.L
    rate_vals = None
    if delta_rate is not None:
        tau = 1e-4
        plus = _ShiftedField(delta, delta_rate, tau)
        minus = _ShiftedField(delta, delta_rate, -tau)
        fp = ExtensionOperator(geom, plus, check=False).physical_at_chart(smp.Xs, xi)
        fm = ExtensionOperator(geom, minus, check=False).physical_at_chart(smp.Xs, xi)
        rate_vals = (fp - fm) / (2 * tau)
        ddot = np.abs(delta_rate.value(y))
    rows = []
    for k in range(xv.shape[1]):
        for p in p_values:
            norm_f = _lp(smp.w, np.linalg.norm(vals[:, k], axis=-1), p) / depth ** (1 / p)
            grad_f = _lp(smp.w, np.linalg.norm(grads[:, k], axis=(-2, -1)), p) / depth ** (1 / p)
            lp_xi = _lp(dA, xv[:, k], p)
            w1p_xi = lp_xi + _lp(dA, np.linalg.norm(xg[:, k], axis=-1), p)
            row = {
                "mode": k,
                "p": p,
                "L": geom.L,
                "lp_ratio": norm_f / lp_xi,
                "w1p_ratio": (norm_f + grad_f)
                / (w1p_xi + _lp(dA, np.abs(xv[:, k]) * dg, p) + lp_xi),
            }
            if rate_vals is not None:
                num = _lp(smp.w, np.linalg.norm(rate_vals[:, k], axis=-1), p) / depth ** (1 / p)
                den = _lp(dA, np.abs(xv[:, k]) * ddot, p)
                row["dt_ratio"] = num / den if den > 0 else 0.0
            rows.append(row)
    C = {
        key: max(r[key] for r in rows)
        for key in ("lp_ratio", "w1p_ratio", "dt_ratio")
        if key in rows[0]
    }
    return {"rows": rows, "C": C}


@dataclass(frozen=True)
class _ShiftedField:
    base: object
    rate: object
    tau: float

    def value(self, y):
        return self.base.value(y) + self.tau * self.rate.value(y)

    def grad(self, y):
        return self.base.grad(y) + self.tau * self.rate.grad(y)
