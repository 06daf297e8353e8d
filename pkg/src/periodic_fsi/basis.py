"""Galerkin families on the moving fluid domain.

Two families are joined.  Shell-lifted fields ``Y_k = F_delta(xi_k)`` carry
the shell modes into the fluid; steady fields ``Zh_k`` live on the
reference domain, vanish on the lid and on the walls, and only have a
normal component on the pressure faces.  They are pushed to ``Omega_delta``
by the Piola map of ``Theta o Psi``.  The interleaved family is
``X = (Y_1, Z_1, Y_2, Z_2, ...)``.

Trace data are the shell mode on ``omega`` for a ``Y`` field and the normal
trace on ``Gamma_p`` for a ``Z`` field.  They are orthonormalized by
Gram-Schmidt in ``L2(omega) + L2(Gamma_p)``, and the same transform acts
on the volume fields, so traces stay independent of time.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, IllConditioned
from .extension import ExtensionOperator
from .fields import evaluate_with_gradient, piola_from_chart, sample_domain
from .shell import ShellBatch

__all__ = [
    "SteadyFamily",
    "build_steady_divfree",
    "DeltaTrajectory",
    "BasisSample",
    "GalerkinBasis",
    "assemble_X",
    "density_sanity",
]


# ------------------------------------------------------------------ steady
@dataclass(frozen=True)
class SteadyFamily:
    """Divergence-free chart fields ``Zh_k`` on the reference domain.

    Mode 0 is the through-flow ``(4 sin^2(pi y2) sin^2(pi zeta), 0, 0)``
    with unit flux from the face ``y1 = 0`` to ``y1 = 1``.  The remaining
    modes are ``curl(psi e2)`` for ``psi = cos(m pi y1) sin(j pi y2)
    sin^2(l pi zeta)`` with ``m`` in ``{0, 1}``.  All fields are in flux
    form, i.e. they stand for ``grad Theta Zh / det Theta``.
    """

    modes: tuple

    @property
    def count(self):
        return len(self.modes)

    def chart_field(self, X):
        """Chart vectors at points (m, 3); shape (m, count, 3)."""
        X = np.asarray(X, dtype=float)
        y1, y2, z = X[..., 0], X[..., 1], X[..., 2]
        out = np.zeros(X.shape[:-1] + (self.count, 3))
        for k, (m, j, l) in enumerate(self.modes):
            if m < 0:
                out[..., k, 0] = 4.0 * np.sin(np.pi * y2) ** 2 * np.sin(np.pi * z) ** 2
                continue
            s = np.sin(j * np.pi * y2)
            out[..., k, 0] = -l * np.pi * np.cos(m * np.pi * y1) * s * np.sin(2 * l * np.pi * z)
            out[..., k, 2] = -m * np.pi * np.sin(m * np.pi * y1) * s * np.sin(l * np.pi * z) ** 2
        return out

    def chart_divergence(self, X):
        """Analytic ``div_X Zh``; shape (m, count)."""
        X = np.asarray(X, dtype=float)
        y1, y2, z = X[..., 0], X[..., 1], X[..., 2]
        out = np.zeros(X.shape[:-1] + (self.count,))
        for k, (m, j, l) in enumerate(self.modes):
            if m < 0:
                continue  # the through-flow does not depend on y1
            s = np.sin(j * np.pi * y2)
            d1 = l * m * np.pi**2 * np.sin(m * np.pi * y1) * s * np.sin(2 * l * np.pi * z)
            d3 = -m * np.pi * np.sin(m * np.pi * y1) * s * (
                l * np.pi * np.sin(2 * l * np.pi * z)
            )
            out[..., k] = d1 + d3
        return out

    def face_traces(self, geom, n=None):
        """Outward normal traces ``b_k`` on both pressure faces.

        Returns
        -------
        pts : ndarray (q, 2)
            Face quadrature points in ``(y2, zeta)``.
        area_w : ndarray (q,)
            Physical area weights.
        b_left, b_right : ndarray (q, count)
            Physical normal traces on ``y1 = 0`` and ``y1 = 1``.
        """
        pts, w = geom.face_quadrature(n)
        out = []
        for y1, sign in ((0.0, -1.0), (1.0, 1.0)):
            Xs = np.column_stack([np.full(len(w), y1), pts])
            _, jac, _ = geom.chart(Xs)
            area = np.linalg.norm(np.cross(jac[:, :, 1], jac[:, :, 2]), axis=-1)
            Fh = self.chart_field(Xs)
            out.append((sign * Fh[..., 0] / area[:, None], w * area))
        (bl, wl), (br, _) = out
        return pts, wl, bl, br

    def face_fluxes(self, geom, n=None):
        """Outward fluxes through ``y1 = 0`` and ``y1 = 1``; two (count,) arrays."""
        _, aw, bl, br = self.face_traces(geom, n)
        return aw @ bl, aw @ br

    def trace_gram(self, geom, n=None):
        """``L2(Gamma_p)`` Gram matrix of the normal traces."""
        _, aw, bl, br = self.face_traces(geom, n)
        return np.einsum("q,qi,qj->ij", aw, bl, bl) + np.einsum("q,qi,qj->ij", aw, br, br)


def build_steady_divfree(geom, n_z):
    """Steady divergence-free family with ``n_z`` members.

    The through-flow mode comes first, followed by curl modes ordered by
    ``j^2 + l^2``, then ``m``.
    """
    if n_z < 1:
        raise ValueError("n_z must be at least 1")
    modes = [(-1, 0, 0)]
    kmax = int(np.ceil(np.sqrt(n_z))) + 1
    cands = [(m, j, l) for j in range(1, kmax + 1) for l in range(1, kmax + 1) for m in (0, 1)]
    cands.sort(key=lambda c: (c[1] ** 2 + c[2] ** 2, c[0], c[1]))
    modes.extend(cands[: n_z - 1])
    return SteadyFamily(tuple(modes))


# ------------------------------------------------------------- trajectory
@dataclass(frozen=True)
class DeltaTrajectory:
    """Prescribed lid displacement sampled at uniform time nodes.

    ``coeffs[i]`` and ``rates[i]`` are shell-basis coefficients of
    ``delta(t_i)`` and ``d delta / dt (t_i)``.
    """

    shell_basis: object
    period: float
    coeffs: np.ndarray
    rates: np.ndarray

    @classmethod
    def zero(cls, shell_basis, period, n_nodes):
        z = np.zeros((n_nodes, shell_basis.size))
        return cls(shell_basis, float(period), z, z.copy())

    @property
    def n_nodes(self):
        return self.coeffs.shape[0]

    @property
    def times(self):
        return np.arange(self.n_nodes) * (self.period / self.n_nodes)

    @property
    def is_static(self):
        return not np.any(self.rates) and np.all(self.coeffs == self.coeffs[0])

    def field(self, i):
        return self.shell_basis.field(self.coeffs[i])

    def rate(self, i):
        return self.shell_basis.field(self.rates[i])

    def sup_abs(self, geom, n=None):
        """``max_t max_y |delta|`` on the surface grid."""
        y, _ = geom.surface_quadrature(n)
        vals = self.shell_basis.evaluate(y, 0) @ self.coeffs.T
        return float(np.max(np.abs(vals), initial=0.0))

    def min_det(self, geom, n=None):
        """Smallest Hanzawa determinant over all nodes (see ``min_shift_det``)."""
        y, _ = geom.surface_quadrature(n)
        return geom.min_shift_det(self.shell_basis.evaluate(y, 0) @ self.coeffs.T)


# ---------------------------------------------------------------- samples
@dataclass(frozen=True)
class BasisSample:
    """All Galerkin fields at one time node.

    ``values`` (nq, n, 3), ``grads`` (nq, n, 3, 3) and the Eulerian time
    derivative ``dt`` (nq, n, 3) on the quadrature of ``Omega_delta(t)``.
    """

    sample: object
    values: np.ndarray
    grads: np.ndarray
    dt: np.ndarray


@dataclass
class GalerkinBasis:
    """Interleaved family ``X_k`` with orthonormal trace data.

    Attributes
    ----------
    labels : list of (str, int)
        ``("Y", i)`` or ``("Z", i)`` for each raw member in interleaved order.
    transform : ndarray (n, n)
        Gram-Schmidt transform; ``X = transform @ raw``.
    omega_coeffs : ndarray (n, n_shell)
        Shell-basis coefficients of the ``omega`` trace of each ``X_k``.
    gamma_coeffs : ndarray (n, n_z)
        Coefficients of the ``Gamma_p`` trace in terms of the steady traces.
    gram_raw, gram_cond
        Trace Gram matrix before orthonormalization and its condition number.
    """

    geom: object
    shell_basis: object
    steady: SteadyFamily
    n: int
    labels: list
    transform: np.ndarray
    omega_coeffs: np.ndarray
    gamma_coeffs: np.ndarray
    gram_raw: np.ndarray
    gram_cond: float
    delta_traj: DeltaTrajectory = None
    n_y: int = 2
    n_z: int = 2
    fd_step: float = 1e-6
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def y_index(self):
        return [k for k, (kind, _) in enumerate(self.labels) if kind == "Y"]

    @property
    def shell_active(self):
        """Indices ``k`` whose trace on ``omega`` is not identically zero."""
        return np.flatnonzero(np.any(self.omega_coeffs != 0.0, axis=1))

    def with_trajectory(self, delta_traj):
        return replace(self, delta_traj=delta_traj, _cache={})

    def trace_gram(self):
        """Gram matrix of the orthonormalized traces (identity to round-off)."""
        return self.transform @ self.gram_raw @ self.transform.T

    def displacement_coeffs(self, b):
        """Shell-basis coefficients of ``sum_k b_k X_k`` on ``omega``."""
        return np.asarray(b) @ self.omega_coeffs

    # ------------------------------------------------------- evaluation
    def _raw_fn(self, delta):
        geom = self.geom
        ny = sum(1 for kind, _ in self.labels if kind == "Y")
        xi = ShellBatch.modes(self.shell_basis, range(ny))
        op = ExtensionOperator(geom, delta, check=False)
        order = np.array(
            [i if kind == "Y" else ny + i for kind, i in self.labels], dtype=int
        )

        def fn(X):
            Xs, jac_s, det_s = geom.shift(delta, X)
            Fy = op.chart_field(Xs, xi)
            Zh = self.steady.chart_field(X)[:, : self.n - ny]
            Fz = np.einsum("qij,qkj->qki", jac_s, Zh) / det_s[:, None, None]
            raw = np.concatenate([Fy, Fz], axis=1)[:, order]
            phys = piola_from_chart(geom, Xs, raw)
            return np.einsum("kj,qjd->qkd", self.transform, phys)

        return fn

    def evaluate(self, delta, rate=None, sample=None):
        """Sample all fields for a displacement ``delta`` moving at ``rate``."""
        geom = self.geom
        sample = sample or sample_domain(geom, delta, self.n_y, self.n_z)
        vals, grads = evaluate_with_gradient(sample, self._raw_fn(delta), h=self.fd_step)
        dt = np.zeros_like(vals)
        if rate is not None and np.any(rate.coeffs):
            r_sup = np.max(np.abs(rate.value(geom.surface_quadrature()[0])))
            scale = 1e-5 / max(float(r_sup), 1e-300)
            c, rc = delta.coeffs, rate.coeffs
            plus = self._raw_fn(self.shell_basis.field(c + scale * rc))(sample.X)
            minus = self._raw_fn(self.shell_basis.field(c - scale * rc))(sample.X)
            dV = (plus - minus) / (2.0 * scale)
            s = sample.X[:, 2] - 1.0
            vel = np.zeros_like(sample.X)
            vel[:, 2] = geom.cutoff_sigma(s) * rate.value(sample.X[:, :2])
            _, jac_t, _ = geom.chart(sample.Xs)
            w = np.einsum("qij,qj->qi", jac_t, vel)
            dt = dV - np.einsum("qkij,qj->qki", grads, w)
        return BasisSample(sample, vals, grads, dt)

    def node(self, i):
        """Fields at time node ``i`` of the attached trajectory (cached)."""
        traj = self.delta_traj
        if traj is None:
            raise ContractError("no displacement trajectory attached")
        key = 0 if traj.is_static else i
        if key not in self._cache:
            rate = None if traj.is_static else traj.rate(i)
            self._cache[key] = self.evaluate(traj.field(i), rate)
        return self._cache[key]

    def clear_cache(self):
        self._cache.clear()

    # ------------------------------------------------------------ checks
    def lid_trace_residual(self, delta, n=None):
        """Max ``|X_k(phi_delta(y)) - X_k(y) nu(y)|`` at lid collocation points."""
        geom = self.geom
        y, _ = geom.surface_quadrature(n)
        x = geom.lid_point(y, delta.value(y))
        tc = geom.tubular_project(x)
        X = np.concatenate([tc.y, (1.0 + tc.s)[:, None]], axis=1)
        X = geom.shift_inverse(delta, X)
        F = self._raw_fn(delta)(X)
        trace = self.shell_basis.evaluate(y, 0) @ self.omega_coeffs.T
        target = trace[..., None] * geom.lid(y).nu[:, None, :]
        return np.max(np.abs(F - target), axis=(0, 2))

    def divergence_residual(self, bs):
        """``L2`` norm of ``div X_k`` for a :class:`BasisSample`."""
        div = np.trace(bs.grads, axis1=-2, axis2=-1)
        return np.sqrt(np.einsum("q,qk->k", bs.sample.w, div**2))


def assemble_X(geom, delta_traj, shell_basis, n, n_y=2, n_z=2, cond_max=1e8):
    """Build the interleaved Galerkin family of total dimension ``n``.

    Parameters
    ----------
    geom : Geometry
    delta_traj : DeltaTrajectory or None
    shell_basis : ShellBasis
    n : int
        Total dimension; must be even (``n/2`` shell and ``n/2`` steady members).
    n_y, n_z : int
        Volume quadrature order per panel used for sampling.
    cond_max : float
        Largest admissible condition number of the trace Gram matrix.

    Raises
    ------
    IllConditioned
        If the trace Gram matrix is too badly conditioned.
    """
    if n < 2 or n % 2:
        raise ValueError("basis dimension n must be even and positive")
    half = n // 2
    if half > shell_basis.size:
        raise ValueError(f"shell basis has only {shell_basis.size} modes")
    steady = build_steady_divfree(geom, half)
    labels = []
    for i in range(half):
        labels += [("Y", i), ("Z", i)]
    y, w = geom.surface_quadrature()
    sv = shell_basis.evaluate(y, 0)[:, :half]
    g_omega = np.einsum("q,qi,qj->ij", w, sv, sv)
    g_gamma = steady.trace_gram(geom)
    gram = np.zeros((n, n))
    omega_raw = np.zeros((n, shell_basis.size))
    gamma_raw = np.zeros((n, half))
    for a, (ka, ia) in enumerate(labels):
        if ka == "Y":
            omega_raw[a, ia] = 1.0
        else:
            gamma_raw[a, ia] = 1.0
        for b, (kb, ib) in enumerate(labels):
            if ka == kb == "Y":
                gram[a, b] = g_omega[ia, ib]
            elif ka == kb == "Z":
                gram[a, b] = g_gamma[ia, ib]
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > cond_max:
        raise IllConditioned(f"trace Gram condition number {cond:.3e} exceeds {cond_max:.1e}")
    chol = np.linalg.cholesky(gram)
    transform = np.linalg.inv(chol)
    transform[np.abs(transform) < 1e-15] = 0.0
    return GalerkinBasis(
        geom=geom,
        shell_basis=shell_basis,
        steady=steady,
        n=n,
        labels=labels,
        transform=transform,
        omega_coeffs=transform @ omega_raw,
        gamma_coeffs=transform @ gamma_raw,
        gram_raw=gram,
        gram_cond=cond,
        delta_traj=delta_traj,
        n_y=n_y,
        n_z=n_z,
    )


# --------------------------------------------------------------- density
@dataclass(frozen=True)
class _SingleShell:
    """Adapter presenting one scalar shell field as a batch of size one."""

    value_fn: object
    grad_fn: object

    def value(self, y):
        return self.value_fn(y)[..., None]

    def grad(self, y):
        return self.grad_fn(y)[..., None, :]


def density_sanity(geom, shell_basis, probe, delta=None, sizes=(4, 8, 16), tol=1e-6):
    """Best-approximation errors of a test pair in ``span{X_1..X_n}``.

    Parameters
    ----------
    probe : tuple (q, xi)
        ``q`` maps reference points (m, 3) to physical vectors (m, 3) on
        ``Omega_delta``; ``xi`` has ``value`` and ``grad`` on ``omega``.
    delta : shell field, optional
        Fixed displacement of the domain.
    sizes : sequence of int
        Basis dimensions to test.

    Returns
    -------
    dict
        ``{n: relative error}`` in the norm ``L2(Omega_delta) + L2(omega)``.

    Raises
    ------
    ContractError
        If ``q`` does not match ``xi nu`` on the moving lid.
    """
    q, xi = probe
    y, w = geom.surface_quadrature()
    dv = np.zeros(len(y)) if delta is None else delta.value(y)
    x = geom.lid_point(y, dv)
    tc = geom.tubular_project(x)
    Xl = np.concatenate([tc.y, (1.0 + tc.s)[:, None]], axis=1)
    Xl = geom.shift_inverse(delta, Xl)
    mismatch = np.max(np.abs(q(Xl) - xi.value(y)[:, None] * geom.lid(y).nu))
    if mismatch > tol:
        raise ContractError(f"probe violates trace compatibility (mismatch {mismatch:.2e})")
    out = {}
    for n in sizes:
        gb = assemble_X(geom, None, shell_basis, n)
        sample = sample_domain(geom, delta, gb.n_y, gb.n_z)
        fn = gb._raw_fn(delta)
        V = fn(sample.X)
        target = q(sample.X)
        tv = shell_basis.evaluate(y, 0) @ gb.omega_coeffs.T
        txi = xi.value(y)
        sw = np.sqrt(sample.w)[:, None, None]
        A = np.concatenate(
            [(sw * V).transpose(0, 2, 1).reshape(-1, n), np.sqrt(w)[:, None] * tv], axis=0
        )
        rhs = np.concatenate([(sw[:, :, 0] * target).reshape(-1), np.sqrt(w) * txi])
        coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        res = np.linalg.norm(A @ coef - rhs) / max(np.linalg.norm(rhs), 1e-300)
        out[n] = float(res)
    return out
