"""Assembly of the Galerkin system on the moving domain.

With ``u = sum a_j' X_j`` and ``eta = sum a_j X_j`` the Galerkin equations
become the linear second-order system

``M(t) a'' + C(t) a' + K a = F(t)``

with ``M = M_f + M_s`` (fluid and shell mass), and

``C = 1/2 M_f' + 1/2 (D - D^T) + N + A``

where ``D_kj = int dX_j/dt . X_k``, ``N`` is the skew transport matrix of
``v_n`` and ``A`` the viscous matrix.  Testing with ``a'`` shows
``dE/dt = a'.F - a'.A a'`` for ``E = 1/2 a'.M a' + 1/2 a.K a``.

Matrices are stored at uniform time nodes and interpolated linearly in
between; the ``1/2 M_f'`` term is left to the time stepper, which uses the
secant slope of the interpolant.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ContractError
from .extension import ExtensionOperator
from .geometry import _as_field
from .fields import evaluate_with_gradient, piola_from_chart, sample_domain
from .shell import ShellBatch

__all__ = [
    "AssembledSystem",
    "moving_quadrature",
    "assemble",
    "domain_measures",
    "load_vectors",
    "energy",
    "energy_series",
    "energy_balance_residual",
    "dissipation",
    "korn_check",
    "reynolds_check",
]


@dataclass
class AssembledSystem:
    """Time-sampled matrices of the Galerkin ODE.

    Attributes
    ----------
    period : float
    mass_fluid, visc, conv, dtpair : ndarray (N, n, n)
        ``int X_i.X_j``, ``int grad X_i : grad X_j``, the skew transport
        matrix and ``D_kj = int dX_j/dt . X_k`` at each node.
    shell_mass, stiffness : ndarray (n, n)
        ``int_omega X_i X_j dy`` and the Koiter matrix in trace coordinates.
    load_parts : dict of ndarray (N, n)
        Body, shell and pressure loads; ``loads`` is their sum.
    boundary : ndarray (N, n, n, n) or None
        ``Q_kij = 1/2 int_omega X_k X_i X_j J_delta W dy`` for the optional
        quadratic boundary load ``Q_kij a_i' a_j'``.
    """

    period: float
    mass_fluid: np.ndarray
    shell_mass: np.ndarray
    visc: np.ndarray
    conv: np.ndarray
    dtpair: np.ndarray
    stiffness: np.ndarray
    load_parts: dict
    boundary: np.ndarray = None
    geometry_data: dict = field(default_factory=dict)

    def __post_init__(self):
        N, n, _ = self.mass_fluid.shape
        for name in ("visc", "conv", "dtpair"):
            if getattr(self, name).shape != (N, n, n):
                raise DimensionMismatch(f"{name} must have shape {(N, n, n)}")
        for name in ("shell_mass", "stiffness"):
            if getattr(self, name).shape != (n, n):
                raise DimensionMismatch(f"{name} must have shape {(n, n)}")
        self.loads = sum(self.load_parts.values()) if self.load_parts else np.zeros((N, n))
        if self.loads.shape != (N, n):
            raise DimensionMismatch("loads must have shape (N, n)")

    # --------------------------------------------------------- factories
    @classmethod
    def from_matrices(cls, period, mass, damping, stiffness, load_fn, n_nodes):
        """Constant-coefficient system ``M a'' + C a' + K a = F(t)``.

        ``damping`` is stored as the dissipative matrix, so it must be
        symmetric positive semidefinite for the energy identities to apply.
        """
        mass = np.atleast_2d(np.asarray(mass, dtype=float))
        n = mass.shape[0]
        t = np.arange(n_nodes) * (period / n_nodes)
        tile = lambda m: np.repeat(np.atleast_2d(np.asarray(m, float))[None], n_nodes, 0)
        loads = np.array([np.atleast_1d(load_fn(ti)) for ti in t], dtype=float).reshape(
            n_nodes, n
        )
        return cls(
            period=float(period),
            mass_fluid=tile(mass),
            shell_mass=np.zeros((n, n)),
            visc=tile(damping),
            conv=np.zeros((n_nodes, n, n)),
            dtpair=np.zeros((n_nodes, n, n)),
            stiffness=np.atleast_2d(np.asarray(stiffness, dtype=float)),
            load_parts={"total": loads},
        )

    # --------------------------------------------------------- accessors
    @property
    def n(self):
        return self.mass_fluid.shape[1]

    @property
    def n_nodes(self):
        return self.mass_fluid.shape[0]

    @property
    def times(self):
        return np.arange(self.n_nodes) * (self.period / self.n_nodes)

    @property
    def active(self):
        """Indices whose positions enter the system (nonzero stiffness rows)."""
        return np.flatnonzero(np.any(self.stiffness != 0.0, axis=1))

    def mass(self, i):
        return self.mass_fluid[i] + self.shell_mass

    def damping_core(self, i):
        """``1/2 (D - D^T) + N + A`` at node ``i``."""
        D = self.dtpair[i]
        return 0.5 * (D - D.T) + self.conv[i] + self.visc[i]

    def _weights(self, t):
        u = np.asarray(t, dtype=float) * (self.n_nodes / self.period)
        i0 = np.floor(u + 1e-12).astype(int)
        theta = np.clip(u - i0, 0.0, 1.0)
        return i0 % self.n_nodes, (i0 + 1) % self.n_nodes, theta

    def interp(self, name, t):
        """Linear interpolation of a stored node array at time ``t``."""
        arr = getattr(self, name) if isinstance(name, str) else name
        i0, i1, th = self._weights(t)
        return (1.0 - th) * arr[i0] + th * arr[i1]

    def mass_at(self, t):
        return self.interp("mass_fluid", t) + self.shell_mass

    def core_at(self, t):
        i0, i1, th = self._weights(t)
        return (1.0 - th) * self.damping_core(i0) + th * self.damping_core(i1)

    def with_loads(self, load_parts):
        """Copy with replaced loads (matrices shared)."""
        return AssembledSystem(
            self.period, self.mass_fluid, self.shell_mass, self.visc, self.conv,
            self.dtpair, self.stiffness, dict(load_parts), self.boundary, self.geometry_data,
        )

    def spectra(self):
        """Per node: extreme eigenvalues of ``M`` and skewness of ``N``."""
        out = []
        for i in range(self.n_nodes):
            ev = np.linalg.eigvalsh(self.mass(i))
            av = np.linalg.eigvalsh(self.visc[i])
            out.append(
                {
                    "t": float(self.times[i]),
                    "mass_min": float(ev[0]),
                    "mass_max": float(ev[-1]),
                    "visc_min": float(av[0]),
                    "visc_max": float(av[-1]),
                    "conv_skew_defect": float(np.max(np.abs(self.conv[i] + self.conv[i].T))),
                }
            )
        return out


# ------------------------------------------------------------ quadrature
def moving_quadrature(geom, delta, integrand, n_y=None, n_z=None):
    """``int_{Omega_delta} F dx`` by pullback to the reference domain.

    Parameters
    ----------
    integrand : callable
        Maps physical points (m, 3) to values (m, ...).

    Raises
    ------
    DegenerateMap
        If the Hanzawa map folds on the quadrature grid.
    """
    _, _, x, w, _ = geom.deformed_quadrature(delta, n_y, n_z)
    vals = np.asarray(integrand(x), dtype=float)
    return np.tensordot(w, vals, axes=(0, 0))


# --------------------------------------------------------------- assembly
def _node_terms(basis, i, v_coeff, geom):
    bs = basis.node(i)
    w = bs.sample.w
    V, G, Dt = bs.values, bs.grads, bs.dt
    Mf = np.einsum("q,qid,qjd->ij", w, V, V)
    A = np.einsum("q,qiab,qjab->ij", w, G, G)
    D = np.einsum("q,qjd,qkd->kj", w, Dt, V)
    if v_coeff is not None and np.any(v_coeff):
        v = np.einsum("qjd,j->qd", V, v_coeff)
        T = np.einsum("qjab,qb->qja", G, v)
        B = np.einsum("q,qja,qka->kj", w, T, V)
        N = 0.5 * (B - B.T)
    else:
        N = np.zeros_like(Mf)
    intX = np.einsum("q,qkd->kd", w, V)
    return Mf, A, D, N, intX


def _face_fluxes(basis, delta):
    """Outward fluxes of every ``X_k`` through ``y1 = 0`` and ``y1 = 1``.

    A lifted field sends half of its lid flux through each pressure face;
    the through-flow member carries unit flux from left to right.
    """
    geom = basis.geom
    ny = sum(1 for kind, _ in basis.labels if kind == "Y")
    op = ExtensionOperator(geom, delta, check=False)
    c = op.flux(ShellBatch.modes(basis.shell_basis, range(ny)))
    zl, zr = basis.steady.face_fluxes(geom)
    left = np.empty(basis.n)
    right = np.empty(basis.n)
    for k, (kind, idx) in enumerate(basis.labels):
        if kind == "Y":
            left[k] = right[k] = -0.5 * c[idx]
        else:
            left[k], right[k] = zl[idx], zr[idx]
    return basis.transform @ left, basis.transform @ right


def domain_measures(basis):
    """Reference volume, parameter-square area and area of one pressure face."""
    geom = basis.geom
    zero = basis.shell_basis.field(np.zeros(basis.shell_basis.size))
    volume = moving_quadrature(geom, zero, lambda x: np.ones(len(x)))
    _, w = geom.surface_quadrature()
    return {
        "volume": float(volume),
        "lid_area": float(np.sum(w)),
        "face_area": float(np.sum(basis.steady.face_traces(geom)[1])),
    }


def assemble(
    basis,
    K_op,
    forcing,
    v_coeffs=None,
    boundary_term=False,
    viscosity=1.0,
    fluid_density=1.0,
    shell_density=1.0,
    progress=None,
):
    """Assemble every term of the Galerkin system at all time nodes.

    Parameters
    ----------
    basis : GalerkinBasis
        With an attached displacement trajectory.
    K_op : KoiterOperator
    forcing : ForcingSpec
    v_coeffs : ndarray (N, n), optional
        Coefficients of the transport field ``v_n = sum v_k X_k``.
    boundary_term : bool
        Also assemble the quadratic boundary load tensor.
    viscosity, fluid_density, shell_density : float
        Physical constants (all one in the normalized setting).
    """
    traj = basis.delta_traj
    if traj is None:
        raise ContractError("basis has no displacement trajectory")
    geom = basis.geom
    N, n = traj.n_nodes, basis.n
    if v_coeffs is not None:
        v_coeffs = np.asarray(v_coeffs, dtype=float)
        if v_coeffs.shape != (N, n):
            raise DimensionMismatch(f"transport coefficients must have shape {(N, n)}")
    if abs(traj.period - forcing.period) > 1e-12 * forcing.period:
        raise ContractError("forcing period differs from the trajectory period")
    Mf = np.zeros((N, n, n))
    A = np.zeros((N, n, n))
    D = np.zeros((N, n, n))
    Nc = np.zeros((N, n, n))
    intX = np.zeros((N, n, 3))
    flux_l = np.zeros((N, n))
    flux_r = np.zeros((N, n))
    static = traj.is_static
    for i in range(N):
        vi = None if v_coeffs is None else v_coeffs[i]
        if static and i > 0 and (vi is None or not np.any(vi)):
            Mf[i], A[i], D[i], Nc[i], intX[i] = Mf[0], A[0], D[0], 0.0, intX[0]
            flux_l[i], flux_r[i] = flux_l[0], flux_r[0]
            continue
        Mf[i], A[i], D[i], Nc[i], intX[i] = _node_terms(basis, i, vi, geom)
        if static and i > 0:
            flux_l[i], flux_r[i] = flux_l[0], flux_r[0]
        else:
            flux_l[i], flux_r[i] = _face_fluxes(basis, traj.field(i))
        if progress is not None:
            progress(i, N)
    basis.clear_cache()
    Mf = 0.5 * (Mf + Mf.transpose(0, 2, 1))
    A = 0.5 * (A + A.transpose(0, 2, 1))

    y, w = geom.surface_quadrature()
    tr = basis.shell_basis.evaluate(y, 0) @ basis.omega_coeffs.T
    shell_mass = shell_density * np.einsum("q,qi,qj->ij", w, tr, tr)
    shell_mass[np.abs(shell_mass) < 1e-14] = 0.0
    stiffness = basis.omega_coeffs @ K_op.K_matrix @ basis.omega_coeffs.T
    stiffness = 0.5 * (stiffness + stiffness.T)
    int_trace = w @ tr

    boundary = None
    if boundary_term:
        d = geom.lid(y)
        boundary = np.zeros((N, n, n, n))
        for i in range(N):
            J = d.jacobian_factor(traj.field(i).value(y))
            boundary[i] = 0.5 * np.einsum("q,qk,qi,qj->kij", w * J * d.W, tr, tr, tr)

    system = AssembledSystem(
        period=traj.period,
        mass_fluid=fluid_density * Mf,
        shell_mass=shell_mass,
        visc=viscosity * A,
        conv=fluid_density * Nc,
        dtpair=fluid_density * D,
        stiffness=stiffness,
        load_parts={},
        boundary=boundary,
        geometry_data={
            "int_X": intX,
            "int_trace": int_trace,
            "flux_left": flux_l,
            "flux_right": flux_r,
            "gram_fluid": Mf,
            "gram_trace": shell_mass / shell_density,
            **domain_measures(basis),
        },
    )
    return system.with_loads(load_vectors(system, forcing))


def load_vectors(system, forcing):
    """Body, shell and pressure loads of ``forcing`` at the system nodes.

    ``F_k = int f.X_k dx + int_omega g X_k dy - int_{Gamma_p} P X_k.nu dA``.
    """
    gd = system.geometry_data
    t = system.times
    fvec = np.array([forcing.body(ti) for ti in t])
    gval = np.array([forcing.shell(ti) for ti in t])
    pin, pout = np.array([forcing.pressure(ti) for ti in t]).T
    return {
        "body": np.einsum("tkd,td->tk", gd["int_X"], fvec),
        "shell": gval[:, None] * gd["int_trace"][None, :],
        "pressure": -(pin[:, None] * gd["flux_left"] + pout[:, None] * gd["flux_right"]),
    }


# ---------------------------------------------------------------- energy
def energy(system, t, a, a_dot):
    """``E_n = 1/2 a'.M(t) a' + 1/2 a.K a``."""
    a = np.asarray(a, dtype=float)
    a_dot = np.asarray(a_dot, dtype=float)
    return 0.5 * a_dot @ system.mass_at(t) @ a_dot + 0.5 * a @ system.stiffness @ a


def energy_series(system, traj):
    return np.array(
        [energy(system, t, a, p) for t, a, p in zip(traj.times, traj.a, traj.a_dot)]
    )


def dissipation(system, traj):
    """``int int |grad u|^2`` over the trajectory (midpoint rule per step)."""
    pm = traj.midpoint_velocities()
    tm = 0.5 * (traj.times[1:] + traj.times[:-1])
    vals = [p @ system.interp("visc", t) @ p for p, t in zip(pm, tm)]
    return float(np.sum(vals) * traj.dt)


def energy_balance_residual(system, traj, extra_load=None):
    """Residual of ``dE/dt + a'.A a' - a'.F`` per step.

    The difference quotient of ``E`` is compared with the power terms at
    the step midpoint.  ``extra_load(t, p)`` adds state-dependent loads.
    """
    E = energy_series(system, traj)
    dt = traj.dt
    pm = traj.midpoint_velocities()
    tm = 0.5 * (traj.times[1:] + traj.times[:-1])
    res = np.empty(len(pm))
    for j, (p, t) in enumerate(zip(pm, tm)):
        F = system.interp("loads", t)
        if extra_load is not None:
            F = F + extra_load(t, p)
        power = p @ F - p @ system.interp("visc", t) @ p
        res[j] = (E[j + 1] - E[j]) / dt - power
    return res


# ----------------------------------------------------------------- checks
def _random_curl_fields(rng, count, top=None):
    """Chart vector potentials vanishing to second order on the box faces.

    ``top(y)`` moves the upper face to ``zeta = 1 + top(y)``.
    """
    coefs = rng.normal(size=(count, 3, 4))

    def potential(X):
        y1, y2, z = X[..., 0], X[..., 1], X[..., 2]
        lid = 1.0 if top is None else 1.0 + top(X[..., :2])
        bump = (np.sin(np.pi * y1) * np.sin(np.pi * y2) * z * (lid - z)) ** 2
        mono = np.stack([np.ones_like(y1), y1, y2, z], axis=-1)
        return bump[..., None, None] * np.einsum("...m,kcm->...kc", mono, coefs)

    def curl(X, h=1e-5):
        d = []
        for ax in range(3):
            e = np.zeros(3)
            e[ax] = h
            d.append((potential(X + e) - potential(X - e)) / (2 * h))
        out = np.empty(X.shape[:-1] + (count, 3))
        out[..., 0] = d[1][..., 2] - d[2][..., 1]
        out[..., 1] = d[2][..., 0] - d[0][..., 2]
        out[..., 2] = d[0][..., 1] - d[1][..., 0]
        return out

    return curl


def korn_check(geom, delta=None, n_fields=4, seed=0, n_y=4, n_z=4):
    """Compare ``int D(u):D(q)`` with ``1/2 int grad u : grad q``.

    Random divergence-free fields vanishing on all of ``partial Omega_delta``
    are built as Piola images of curls taken in shifted chart coordinates,
    where the potentials carry the factor ``(1 + delta(y) - zeta)^2``.  Such
    fields are smooth on every panel of the deformed rule, so the returned
    relative difference of the two Gram matrices is a pure quadrature error.
    """
    rng = np.random.default_rng(seed)
    lid = _as_field(delta)
    curl = _random_curl_fields(rng, n_fields, lid.value)
    sample = sample_domain(geom, delta, n_y, n_z)

    def fn(X):
        Xs = geom.shift(delta, X)[0]
        return piola_from_chart(geom, Xs, curl(Xs))

    _, G = evaluate_with_gradient(sample, fn, h=1e-4, order=4)
    Dsym = 0.5 * (G + np.swapaxes(G, -1, -2))
    lhs = np.einsum("q,qiab,qjab->ij", sample.w, Dsym, Dsym)
    rhs = 0.5 * np.einsum("q,qiab,qjab->ij", sample.w, G, G)
    return {
        "sym_gram": lhs,
        "half_grad_gram": rhs,
        "rel_diff": float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))),
    }


def reynolds_check(geom, delta_traj, n_y=4, n_z=4):
    """Discrete Reynolds transport for the volume of ``Omega_delta(t)``.

    Returns the largest difference between the centred difference quotient
    of ``|Omega_delta(t)|`` and ``int_omega d_t delta J_delta W dy``.
    """
    N = delta_traj.n_nodes
    h = delta_traj.period / N
    vols = np.array(
        [float(np.sum(geom.deformed_quadrature(delta_traj.field(i), n_y, n_z)[3])) for i in range(N)]
    )
    y, w = geom.surface_quadrature()
    d = geom.lid(y)
    err = np.empty(N)
    for i in range(N):
        rate = (vols[(i + 1) % N] - vols[i - 1]) / (2 * h)
        dv = delta_traj.field(i).value(y)
        flux = np.sum(w * d.W * d.jacobian_factor(dv) * delta_traj.rate(i).value(y))
        err[i] = rate - flux
    return float(np.max(np.abs(err)))
