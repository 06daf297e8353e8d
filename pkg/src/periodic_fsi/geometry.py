"""Reference domain with a curved lid, tubular coordinates and domain maps.

The reference domain is ``Omega = {(y, z) : y in (0,1)^2, 0 < z < 1 + h(y)}``.
Its lid ``M`` is the graph ``phi(y) = (y1, y2, 1 + h(y))`` with outward unit
normal ``nu = (-grad h, 1) / W`` where ``W = sqrt(1 + |grad h|^2)``.  The
faces ``y1 = 0`` and ``y1 = 1`` carry pressure data, the remaining faces are
rigid walls.

Curvature convention: principal curvatures are the eigenvalues of the shape
operator ``I^{-1} II`` with ``II_ij = d_ij phi . nu`` for the outward normal,
so a dome has negative curvatures.  With this convention the volume element
along normals is ``J(y, s) = det(Id - s S) = 1 - s (k1 + k2) + s^2 k1 k2``.

All volume computations go through a global chart ``Theta`` from the cube
``(0,1)^3`` onto ``Omega``.  Above ``zeta = 1 - L`` it is the normal collar
``Theta(y, zeta) = phi(y) + (zeta - 1) nu(y)``; well below it is the
identity, and a quintic blend joins the two.  The Hanzawa map then acts in
chart coordinates as a vertical shift ``zeta -> zeta + sigma_L(zeta-1) delta(y)``,
which is the physical map ``x -> x + sigma_L(s) delta(p) nu(p)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMap, NotConverged, OutsideCollar
from .profiles import LidProfile, PolyBump, smoothstep
from .quadrature import composite, gauss, tensor2, tensor3

__all__ = [
    "CurvatureData",
    "TubularCoords",
    "LidData",
    "Geometry",
    "FunctionField",
    "ZERO_FIELD",
]


@dataclass(frozen=True)
class CurvatureData:
    """Principal curvatures at lid points (arrays broadcast over points)."""

    kappa1: np.ndarray
    kappa2: np.ndarray
    gauss: np.ndarray
    mean_sum: np.ndarray
    kappa_max: float

    @property
    def mean(self):
        """Mean curvature ``(k1 + k2) / 2``."""
        return 0.5 * self.mean_sum


@dataclass(frozen=True)
class TubularCoords:
    p: np.ndarray
    y: np.ndarray
    s: np.ndarray
    converged: bool
    residual: float


@dataclass(frozen=True)
class LidData:
    """Pointwise lid quantities at parameter points ``y``."""

    h: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    W: np.ndarray
    dphi: np.ndarray  # (..., 2, 3): d_i phi
    dnu: np.ndarray  # (..., 2, 3): d_i nu
    hsum: np.ndarray  # k1 + k2
    gauss: np.ndarray  # k1 k2

    def jacobian_factor(self, s):
        """``J(y, s) = 1 - s (k1 + k2) + s^2 k1 k2``."""
        return 1.0 - s * self.hsum + s * s * self.gauss


@dataclass(frozen=True)
class FunctionField:
    """Scalar field on the lid parameter square given by callables."""

    value_fn: object
    grad_fn: object

    def value(self, y):
        return np.asarray(self.value_fn(np.asarray(y, dtype=float)), dtype=float)

    def grad(self, y):
        return np.asarray(self.grad_fn(np.asarray(y, dtype=float)), dtype=float)


ZERO_FIELD = FunctionField(
    lambda y: np.zeros(y.shape[:-1]), lambda y: np.zeros(y.shape)
)


def _as_field(delta):
    return ZERO_FIELD if delta is None else delta


@dataclass
class Geometry:
    """Unit box with a graph lid; immutable after construction.

    Parameters
    ----------
    profile : LidProfile
        Lid height function.
    L : float
        Collar half width.  Must satisfy ``L * kappa < 1`` where ``kappa``
        is the grid maximum of ``|k1| + |k2|``.
    n_y, n_z : int
        Gauss points per panel for the volume rule (lid directions and
        height direction).
    n_collar : int
        Gauss points per height panel inside the collar ``zeta > 1 - L``,
        where lifted fields vary on the scale ``L``.
    n_surface : int
        Gauss points per panel for lid surface integrals.
    """

    profile: LidProfile = field(default_factory=LidProfile)
    L: float = 0.2
    n_y: int = 3
    n_z: int = 3
    n_collar: int = 6
    n_surface: int = 8
    gamma_p_faces: tuple = ("y1=0", "y1=1")
    gamma_d_faces: tuple = ("y2=0", "y2=1", "z=0")

    def __post_init__(self):
        if not 0.0 < self.L <= 0.5:
            raise ValueError("collar width L must lie in (0, 0.5]")
        if set(self.gamma_p_faces) != {"y1=0", "y1=1"}:
            raise ValueError("pressure faces must be the pair y1=0, y1=1")
        L = self.L
        self.zeta_top = 1.0 - L  # tubular chart above this level
        self.zeta_bottom = 0.5 * (1.0 - 0.5 * L)  # identity chart below
        self.z_a = 0.5 * L  # flux channel turns between z_a and z_b
        self.z_b = self.zeta_bottom
        self.bump = PolyBump(0.5 * L, 1.0 - 0.5 * L)
        self.y_breaks = _refine([0.0, 0.5 * L, 1.0 - 0.5 * L, 1.0])
        self.z_breaks = _refine(
            [0.0, self.z_a, self.zeta_bottom, self.zeta_top, 1.0 - 0.5 * L, 1.0]
        )
        g = np.linspace(0.0, 1.0, 41)
        grid = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        curv = self.curvature_at(grid)
        self.kappa = float(np.max(np.abs(curv.kappa1) + np.abs(curv.kappa2)))
        if self.L * self.kappa >= 1.0:
            raise ValueError(
                f"collar width L={L} too large for lid curvature {self.kappa:.4g}"
            )
        if not self.is_flat:
            X, _ = self.volume_quadrature()
            _, _, det = self.chart(X)
            if np.min(det) <= 0.0:
                raise ValueError("chart is not orientation preserving")

    @property
    def is_flat(self):
        return self.profile.is_flat

    # ------------------------------------------------------------------ lid
    def lid(self, y):
        """Evaluate :class:`LidData` at parameter points ``y`` (..., 2)."""
        y = np.asarray(y, dtype=float)
        h, g, H = self.profile.evaluate(y)
        W = np.sqrt(1.0 + np.sum(g * g, axis=-1))
        n = np.stack([-g[..., 0], -g[..., 1], np.ones_like(h)], axis=-1)
        nu = n / W[..., None]
        dn = np.zeros(h.shape + (2, 3))
        dn[..., :, 0] = -H[..., 0, :]
        dn[..., :, 1] = -H[..., 1, :]
        dW = np.einsum("...k,...ki->...i", g, H) / W[..., None]
        dnu = dn / W[..., None, None] - n[..., None, :] * (
            dW[..., :, None] / (W * W)[..., None, None]
        )
        phi = np.stack([y[..., 0], y[..., 1], 1.0 + h], axis=-1)
        dphi = np.zeros(h.shape + (2, 3))
        dphi[..., 0, 0] = 1.0
        dphi[..., 1, 1] = 1.0
        dphi[..., :, 2] = g
        trH = H[..., 0, 0] + H[..., 1, 1]
        gHg = np.einsum("...i,...ij,...j->...", g, H, g)
        hsum = (trH - gHg / (W * W)) / W
        detH = H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]
        gauss = detH / W**4
        return LidData(h, g, H, phi, nu, W, dphi, dnu, hsum, gauss)

    def lid_point(self, y, delta_val=0.0):
        """Deformed lid point ``phi(y) + delta_val * nu(y)``."""
        d = self.lid(y)
        return d.phi + np.asarray(delta_val, dtype=float)[..., None] * d.nu

    def curvature_at(self, y):
        """Principal curvatures of the lid at ``y``; see module docstring."""
        d = self.lid(y)
        half = 0.5 * d.hsum
        disc = np.sqrt(np.maximum(half * half - d.gauss, 0.0))
        k1, k2 = half - disc, half + disc
        kmax = float(np.max(np.abs(k1) + np.abs(k2))) if np.size(k1) else 0.0
        return CurvatureData(k1, k2, k1 * k2, k1 + k2, kmax)

    def j_eta_weight(self, y, eta_val):
        """``G eta^2 - 2 H eta + 1`` with ``H`` the mean curvature."""
        c = self.curvature_at(y)
        eta = np.asarray(eta_val, dtype=float)
        return j_eta_formula(c.gauss, c.mean, eta)

    def cutoff_sigma(self, s, deriv=0):
        """Collar cutoff: 1 for ``|s| <= L/2``, 0 for ``|s| >= L``."""
        return cutoff(self.L, s, deriv)

    # ---------------------------------------------------- tubular projection
    def tubular_project(self, x, tol=1e-13, maxiter=60, check_collar=True):
        """Closest lid point ``p`` and signed distance ``s`` (negative inside).

        Newton's method on ``(x - phi(y)) . d_i phi(y) = 0``; the lid is
        extended by ``h = 0`` outside the unit square.
        """
        x = np.asarray(x, dtype=float)
        y = x[..., :2].copy()
        converged = False
        for _ in range(maxiter):
            d = self.lid(y)
            r = x - d.phi
            grad = -np.einsum("...k,...ik->...i", r, d.dphi)
            hess = np.einsum("...ik,...jk->...ij", d.dphi, d.dphi)
            hess = hess - d.hess * r[..., 2][..., None, None]
            step = np.linalg.solve(hess, grad[..., None])[..., 0]
            y = y - step
            if np.max(np.abs(step), initial=0.0) < tol:
                converged = True
                break
        d = self.lid(y)
        s = np.einsum("...k,...k->...", x - d.phi, d.nu)
        resid = float(
            np.max(np.linalg.norm(x - d.phi - s[..., None] * d.nu, axis=-1), initial=0.0)
        )
        if not converged:
            raise NotConverged(f"tubular projection stalled (residual {resid:.3e})")
        if check_collar and np.any(np.abs(s) > self.L):
            raise OutsideCollar("point lies outside the normal collar |s| <= L")
        return TubularCoords(d.phi, y, s, converged, resid)

    # ---------------------------------------------------------------- chart
    def _blend(self, zeta, deriv=0):
        a, b = self.zeta_bottom, self.zeta_top
        v = smoothstep((zeta - a) / (b - a), deriv)
        return v / (b - a) ** deriv

    def chart(self, X):
        """Chart ``Theta`` with Jacobian (..., 3, 3) and determinant."""
        X = np.asarray(X, dtype=float)
        shape = X.shape[:-1]
        if self.is_flat:
            jac = np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
            return X.copy(), jac, np.ones(shape)
        y, zeta = X[..., :2], X[..., 2]
        s = zeta - 1.0
        d = self.lid(y)
        b = self._blend(zeta)[..., None]
        db = self._blend(zeta, 1)[..., None]
        T = d.phi + s[..., None] * d.nu
        x = X + b * (T - X)
        jac = np.zeros(shape + (3, 3))
        for i in range(2):
            dT = d.dphi[..., i, :] + s[..., None] * d.dnu[..., i, :]
            e = np.zeros(3)
            e[i] = 1.0
            jac[..., :, i] = e + b * (dT - e)
        e3 = np.array([0.0, 0.0, 1.0])
        jac[..., :, 2] = e3 + db * (T - X) + b * (d.nu - e3)
        return x, jac, np.linalg.det(jac)

    def chart_inverse(self, x, tol=1e-14, maxiter=50):
        """Invert ``Theta`` by Newton's method."""
        x = np.asarray(x, dtype=float)
        if self.is_flat:
            return x.copy()
        X = x.copy()
        for _ in range(maxiter):
            val, jac, _ = self.chart(X)
            step = np.linalg.solve(jac, (val - x)[..., None])[..., 0]
            X = X - step
            if np.max(np.abs(step), initial=0.0) < tol:
                return X
        raise NotConverged("chart inversion did not converge")

    # ------------------------------------------------------- Hanzawa map
    def shift(self, delta, X):
        """Chart-space Hanzawa map with Jacobian and determinant.

        ``Psi(y, zeta) = (y, zeta + sigma_L(zeta - 1) delta(y))``.
        """
        delta = _as_field(delta)
        X = np.asarray(X, dtype=float)
        y, s = X[..., :2], X[..., 2] - 1.0
        dv, dg = delta.value(y), delta.grad(y)
        sig, dsig = self.cutoff_sigma(s), self.cutoff_sigma(s, 1)
        out = X.copy()
        out[..., 2] = X[..., 2] + sig * dv
        jac = np.zeros(X.shape[:-1] + (3, 3))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0
        jac[..., 2, 0] = sig * dg[..., 0]
        jac[..., 2, 1] = sig * dg[..., 1]
        jac[..., 2, 2] = 1.0 + dsig * dv
        return out, jac, jac[..., 2, 2]

    def min_shift_det(self, dv):
        """Smallest ``det grad Psi = 1 + sigma_L' delta`` over the collar.

        The cutoff rises with peak slope ``15 / (4 L)``, so the map stays
        orientation preserving exactly while ``delta > -4 L / 15``.
        """
        low = float(np.min(np.minimum(dv, 0.0), initial=0.0))
        return 1.0 + 3.75 / self.L * low

    def shift_inverse(self, delta, X, tol=1e-15, maxiter=100):
        delta = _as_field(delta)
        X = np.asarray(X, dtype=float)
        dv = delta.value(X[..., :2])
        if self.min_shift_det(dv) <= 0.0:
            raise DegenerateMap("lid displacement folds the collar (det <= 0)")
        # the root lies between X - delta and X (sigma takes values in [0, 1]);
        # Newton steps that leave the bracket fall back to bisection
        target = X[..., 2]
        lo = np.minimum(target, target - dv)
        hi = np.minimum(np.maximum(target, target - dv), 1.0)
        z = np.clip(target - self.cutoff_sigma(target - 1.0) * dv, lo, hi)
        dz_old = hi - lo
        for _ in range(maxiter):
            f = z + self.cutoff_sigma(z - 1.0) * dv - target
            fp = 1.0 + self.cutoff_sigma(z - 1.0, 1) * dv
            lo = np.where(f < 0.0, z, lo)
            hi = np.where(f > 0.0, z, hi)
            znew = z - f / fp
            # bisect when Newton leaves the bracket or fails to halve the step
            bad = (f != 0.0) & (
                ~((znew > lo) & (znew < hi)) | (np.abs(2.0 * f) > np.abs(dz_old * fp))
            )
            znew = np.where(bad, 0.5 * (lo + hi), znew)
            dz = znew - z
            dz_old = dz
            z = znew
            if np.max(np.abs(dz), initial=0.0) < tol:
                break
        else:
            raise NotConverged("inverse shift did not converge")
        out = X.copy()
        out[..., 2] = z
        return out

    def hanzawa_map(self, delta, x):
        """Physical Hanzawa map ``psi_delta`` with Jacobian and determinant.

        Raises
        ------
        DegenerateMap
            If the determinant is not positive at some input point.
        """
        x = np.asarray(x, dtype=float)
        X = self.chart_inverse(x)
        Xs, jac_s, det_s = self.shift(delta, X)
        if np.any(det_s <= 0.0):
            raise DegenerateMap("Hanzawa map folds: det <= 0")
        xs, jac_t1, det_t1 = self.chart(Xs)
        _, jac_t0, det_t0 = self.chart(X)
        jac = jac_t1 @ jac_s @ np.linalg.inv(jac_t0)
        return xs, jac, det_t1 * det_s / det_t0

    def hanzawa_inverse(self, delta, x):
        return self.chart(self.shift_inverse(delta, self.chart_inverse(x)))[0]

    def check_orientation(self, delta):
        """Raise :class:`DegenerateMap` unless ``det grad psi > 0`` on the grid."""
        X, _ = self.volume_quadrature()
        _, _, det = self.shift(delta, X)
        if np.min(det) <= 0.0:
            raise DegenerateMap(f"Hanzawa map folds: min det {np.min(det):.3e}")
        return float(np.min(det))

    def piola_transform(self, delta, field):
        """Push a vector field on ``Omega`` to ``Omega_delta`` (Piola map)."""

        def mapped(xp):
            xp = np.asarray(xp, dtype=float)
            x = self.hanzawa_inverse(delta, xp)
            _, jac, det = self.hanzawa_map(delta, x)
            return np.einsum("...ij,...j->...i", jac, field(x)) / det[..., None]

        return mapped

    # ---------------------------------------------------------- quadrature
    def volume_quadrature(self, n_y=None, n_z=None, n_collar=None):
        """Composite Gauss rule on the chart cube; weights are chart-free."""
        n_y = n_y or self.n_y
        n_z = n_z or self.n_z
        n_c = max(n_collar or self.n_collar, n_z)
        xy, wy = composite(self.y_breaks, n_y)
        mids = 0.5 * (self.z_breaks[:-1] + self.z_breaks[1:])
        counts = np.where(mids > self.zeta_top, n_c, n_z)
        xz, wz = composite(self.z_breaks, counts)
        return tensor3(xy, wy, xy, wy, xz, wz)

    def surface_quadrature(self, n=None):
        """Composite Gauss rule on the parameter square ``omega`` (``dy``)."""
        xy, wy = composite(self.y_breaks, n or self.n_surface)
        return tensor2(xy, wy, xy, wy)

    def face_quadrature(self, n=None):
        """Gauss rule on a pressure face in ``(y2, z)`` coordinates."""
        n = n or self.n_surface
        xy, wy = composite(self.y_breaks, n)
        xz, wz = composite(self.z_breaks, n)
        return tensor2(xy, wy, xz, wz)

    def deformed_quadrature(self, delta, n_y=None, n_z=None, n_collar=None):
        """Physical points and weights on ``Omega_delta``.

        The rule is built in shifted chart coordinates: height panels sit at
        fixed chart levels except the top one, which is stretched to the
        moving lid ``1 + delta(y)``.  Integrands that vary on the collar
        scale therefore never straddle a panel edge, and the rule depends
        smoothly on ``delta``.  Reference points follow from the inverse
        shift.

        Returns the reference points ``X``, shifted chart points ``Xs``,
        physical points, weights, and the full Jacobian of ``Theta o Psi``.
        """
        delta = _as_field(delta)
        n_y = n_y or self.n_y
        n_z = n_z or self.n_z
        n_c = max(n_collar or self.n_collar, n_z)
        xy, wy = composite(self.y_breaks, n_y)
        Y, wY = tensor2(xy, wy, xy, wy)
        zb = self.z_breaks
        mids = 0.5 * (zb[:-1] + zb[1:])
        counts = np.where(mids > self.zeta_top, n_c, n_z)
        zf, wf = composite(zb[:-1], counts[:-1])
        t, wt = gauss(int(counts[-1]))
        dv = delta.value(Y)
        if np.any(dv <= -0.5 * self.L):
            raise DegenerateMap("lid displacement reaches the collar plateau")
        top_len = 0.5 * self.L + dv
        ztop = zb[-2] + top_len[:, None] * t[None, :]
        wtop = top_len[:, None] * wt[None, :]
        nyq, nf, nt = len(wY), len(zf), len(t)
        Z = np.concatenate([np.broadcast_to(zf, (nyq, nf)), ztop], axis=1)
        WZ = np.concatenate([np.broadcast_to(wf, (nyq, nf)), wtop], axis=1)
        Xs = np.concatenate(
            [np.repeat(Y, nf + nt, axis=0), Z.reshape(-1, 1)], axis=1
        )
        w = np.repeat(wY, nf + nt) * WZ.reshape(-1)
        X = self.shift_inverse(delta, Xs)
        _, jac_s, det_s = self.shift(delta, X)
        if np.min(det_s) <= 0.0:
            raise DegenerateMap("Hanzawa map folds on the quadrature grid")
        x, jac_t, det_t = self.chart(Xs)
        return X, Xs, x, w * det_t, jac_t @ jac_s

    def volume(self, delta=None):
        """Volume of ``Omega_delta`` by chart quadrature."""
        _, _, _, w, _ = self.deformed_quadrature(delta)
        return float(np.sum(w))

    def graph_volume(self, delta=None, n=None):
        """Volume of ``Omega_delta`` from lid data only.

        ``|Omega| + int_omega W (d - (k1+k2) d^2/2 + k1 k2 d^3/3) dy``.
        """
        delta = _as_field(delta)
        y, w = self.surface_quadrature(n)
        d = self.lid(y)
        dv = delta.value(y)
        base = np.sum(w * (1.0 + d.h))
        extra = np.sum(w * d.W * (dv - d.hsum * dv**2 / 2 + d.gauss * dv**3 / 3))
        return float(base + extra)


def surface_identity(geom, eta, f, n_a=None, n_b=None):
    """Both sides of the deformed-lid change of variables.

    ``int_{M_eta} (f nu o phi_eta^{-1}) . nu_eta dA`` is integrated over the
    parametrized deformed lid ``phi + eta nu`` with its own area element;
    ``int_omega f J_eta dA`` uses the reference area element and
    ``J_eta = G eta^2 - 2 H eta + 1``.  The two sides use different
    quadrature orders.

    Parameters
    ----------
    eta : field with ``value`` and ``grad``
    f : callable
        Scalar function of the parameter points ``y`` (shape (q, 2)).

    Returns
    -------
    lhs, rhs : float
    """
    n_a = n_a or geom.n_surface + 4
    n_b = n_b or geom.n_surface
    eta = _as_field(eta)
    y, w = geom.surface_quadrature(n_a)
    d = geom.lid(y)
    e, ge = eta.value(y), eta.grad(y)
    tang = d.dphi + ge[..., :, None] * d.nu[..., None, :] + e[..., None, None] * d.dnu
    cross = np.cross(tang[..., 0, :], tang[..., 1, :])
    lhs = float(np.sum(w * f(y) * np.einsum("qd,qd->q", cross, d.nu)))
    y, w = geom.surface_quadrature(n_b)
    rhs = float(np.sum(w * geom.lid(y).W * f(y) * geom.j_eta_weight(y, eta.value(y))))
    return lhs, rhs


def _refine(breaks, max_width=0.25):
    """Split panels wider than ``max_width`` into equal pieces."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    out = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = int(np.ceil((b - a) / max_width - 1e-12))
        out.extend(np.linspace(a, b, m + 1)[1:])
    return np.array(out)


def cutoff(L, s, deriv=0):
    """Quintic collar cutoff ``sigma_L`` and its derivatives in ``s``."""
    s = np.asarray(s, dtype=float)
    t = (np.abs(s) - 0.5 * L) / (0.5 * L)
    if deriv == 0:
        return 1.0 - smoothstep(t)
    sign = np.sign(s) ** deriv
    return -smoothstep(t, deriv) * sign * (2.0 / L) ** deriv


def j_eta_formula(gauss, mean, eta):
    """``G eta^2 - 2 H eta + 1``."""
    return gauss * eta * eta - 2.0 * mean * eta + 1.0
