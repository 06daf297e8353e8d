"""Clamped shell: beam-mode basis, Koiter form and coercivity constants.

The shell displacement lives in ``H^2_0(omega)`` on ``omega = (0,1)^2`` and is
expanded in tensor products of clamped-clamped beam eigenfunctions.  The
Koiter form is used in the working form
``K(eta, xi) = m int D^2 eta : D^2 xi dy + int (b2 grad eta . grad xi + b0 eta xi) dy``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .errors import DimensionMismatch, NotCoercive, RootFindFailure
from .quadrature import composite, tensor2


def beam_eigenvalues(n1d):
    """First ``n1d`` positive roots of ``cos(lam) cosh(lam) = 1``."""
    if n1d < 1:
        raise ValueError("n1d must be at least 1")
    f = lambda lam: np.cos(lam) - 1.0 / np.cosh(lam)  # noqa: E731
    roots = []
    for i in range(1, n1d + 1):
        a, b = i * np.pi, (i + 1) * np.pi
        if f(a) * f(b) >= 0.0:
            raise RootFindFailure(f"no sign change in [{a}, {b}]")
        roots.append(brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return np.array(roots)


def _beam_raw(lam, x, deriv):
    """Unnormalized clamped beam mode, written with bounded exponentials.

    ``cosh - cos - s (sinh - sin)`` with ``s = (cosh - cos)/(sinh - sin)``.
    """
    em = np.exp(-lam)
    denom = 1.0 - em * em - 2.0 * em * np.sin(lam)  # 2 e^{-lam}(sinh - sin)
    s = (1.0 + em * em - 2.0 * em * np.cos(lam)) / denom
    one_minus_s = 2.0 * em * (np.cos(lam) - np.sin(lam) - em) / denom
    grow = 0.5 * one_minus_s * np.exp(lam * x)
    decay = 0.5 * (1.0 + s) * np.exp(-lam * x)
    k = deriv
    trig = -np.cos(lam * x + k * np.pi / 2) + s * np.sin(lam * x + k * np.pi / 2)
    return lam**k * (grow + (-1) ** k * decay + trig)


@dataclass
class BeamModes:
    """L2(0,1)-orthonormal clamped beam eigenfunctions."""

    n1d: int
    lam: np.ndarray = field(init=False)
    norm: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lam = beam_eigenvalues(self.n1d)
        x, w = composite(np.linspace(0, 1, 5), 24)
        vals = np.stack([_beam_raw(l, x, 0) for l in self.lam])
        self.norm = 1.0 / np.sqrt(vals**2 @ w)

    def __call__(self, x, deriv=0):
        """Values of all modes at ``x``; shape ``x.shape + (n1d,)``."""
        x = np.asarray(x, dtype=float)
        out = [self.norm[i] * _beam_raw(l, x, deriv) for i, l in enumerate(self.lam)]
        return np.stack(out, axis=-1)


@dataclass
class ShellBasis:
    """Tensor beam modes ordered by increasing ``lam_i^4 + lam_j^4``.

    Parameters
    ----------
    n1d : int
        Beam modes per direction.
    n_modes : int, optional
        Keep only the first ``n_modes`` tensor modes.
    """

    n1d: int
    n_modes: int = None

    def __post_init__(self):
        self.beams = BeamModes(self.n1d)
        lam4 = self.beams.lam**4
        pairs = [(i, j) for i in range(self.n1d) for j in range(self.n1d)]
        pairs.sort(key=lambda p: (lam4[p[0]] + lam4[p[1]], p))
        if self.n_modes is not None:
            if self.n_modes > len(pairs):
                raise ValueError("n_modes exceeds n1d**2")
            pairs = pairs[: self.n_modes]
        self.pairs = pairs
        self.size = len(pairs)
        self.frequencies2 = np.array([lam4[i] + lam4[j] for i, j in pairs])
        self._ii = np.array([p[0] for p in pairs])
        self._jj = np.array([p[1] for p in pairs])

    def evaluate(self, y, order=2):
        """Mode values (..., n), gradients (..., n, 2) and Hessians (..., n, 2, 2)."""
        y = np.asarray(y, dtype=float)
        b1 = [self.beams(y[..., 0], k)[..., self._ii] for k in range(order + 1)]
        b2 = [self.beams(y[..., 1], k)[..., self._jj] for k in range(order + 1)]
        val = b1[0] * b2[0]
        if order == 0:
            return val
        grad = np.stack([b1[1] * b2[0], b1[0] * b2[1]], axis=-1)
        if order == 1:
            return val, grad
        h11, h12, h22 = b1[2] * b2[0], b1[1] * b2[1], b1[0] * b2[2]
        hess = np.stack(
            [np.stack([h11, h12], -1), np.stack([h12, h22], -1)], axis=-2
        )
        return val, grad, hess

    def field(self, coeffs):
        return ShellField(self, np.asarray(coeffs, dtype=float))

    def quadrature(self, n=16):
        x, w = composite(np.linspace(0, 1, 5), n)
        return tensor2(x, w, x, w)


@dataclass(frozen=True)
class ShellField:
    """Displacement ``sum_k c_k xi_k`` on the lid parameter square."""

    basis: ShellBasis
    coeffs: np.ndarray

    def value(self, y):
        return self.basis.evaluate(y, 0) @ self.coeffs

    def grad(self, y):
        _, g = self.basis.evaluate(y, 1)
        return np.einsum("...kd,k->...d", g, self.coeffs)

    def hess(self, y):
        _, _, h = self.basis.evaluate(y, 2)
        return np.einsum("...kde,k->...de", h, self.coeffs)


def bending_coefficient(thickness, lame_lambda, lame_mu):
    """Bending stiffness ``m`` of the linear Koiter model.

    The bending energy ``h^3/6 int A R : R`` with flat metric and
    ``R = D^2 eta`` has gradient ``m Delta^2 eta`` with
    ``m = (h^3 / 3) (4 lam mu / (lam + 2 mu) + 8 mu)`` on clamped fields.
    """
    lam_eff = 4.0 * lame_lambda * lame_mu / (lame_lambda + 2.0 * lame_mu)
    return thickness**3 / 3.0 * (lam_eff + 8.0 * lame_mu)


def membrane_b0(geometry, thickness, lame_lambda, lame_mu):
    """Curvature-driven zeroth-order coefficient of the membrane part.

    For a normal displacement the linearized metric is ``-eta II``; with the
    elasticity tensor this gives ``b0 = h (4 lam mu/(lam+2mu) H_s^2 + 8 mu (k1^2 + k2^2))``
    where ``H_s = k1 + k2``.
    """
    lam_eff = 4.0 * lame_lambda * lame_mu / (lame_lambda + 2.0 * lame_mu)

    def b0(y):
        c = geometry.curvature_at(y)
        return thickness * (
            lam_eff * c.mean_sum**2 + 8.0 * lame_mu * (c.kappa1**2 + c.kappa2**2)
        )

    return b0


@dataclass
class KoiterOperator:
    """Gram matrices of the Koiter form and of the reference norms.

    Parameters
    ----------
    basis : ShellBasis
    m : float
        Bending coefficient (positive).
    b2 : array_like, shape (2, 2)
        Symmetric second-order coefficient of ``B``.
    b0 : float or callable
        Zeroth-order coefficient of ``B``; a callable is evaluated at
        quadrature points.
    n_quad : int
        Gauss points per panel (four panels per direction).
    """

    basis: ShellBasis
    m: float = 1.0
    b2: np.ndarray = None
    b0: object = 0.0
    n_quad: int = 16

    def __post_init__(self):
        if self.m <= 0.0:
            raise ValueError("bending coefficient m must be positive")
        b2 = np.zeros((2, 2)) if self.b2 is None else np.asarray(self.b2, float)
        if not np.allclose(b2, b2.T):
            raise ValueError("b2 must be symmetric")
        self.b2 = b2
        y, w = self.basis.quadrature(self.n_quad)
        v, g, h = self.basis.evaluate(y)
        b0 = self.b0(y) if callable(self.b0) else np.full(len(w), float(self.b0))
        self.mass = np.einsum("q,qi,qj->ij", w, v, v)
        self.stiff1 = np.einsum("q,qid,qjd->ij", w, g, g)
        self.stiff2 = np.einsum("q,qide,qjde->ij", w, h, h)
        bpart = np.einsum("q,qid,de,qje->ij", w, g, b2, g)
        bpart += np.einsum("q,q,qi,qj->ij", w, b0, v, v)
        K = self.m * self.stiff2 + bpart
        self.K_matrix = 0.5 * (K + K.T)
        self.gram_h2 = self.mass + self.stiff1 + self.stiff2
        self.gram_w12 = self.mass + self.stiff1

    def koiter_form(self, eta, xi):
        eta = np.asarray(eta, dtype=float)
        xi = np.asarray(xi, dtype=float)
        n = self.basis.size
        if eta.shape[-1] != n or xi.shape[-1] != n:
            raise DimensionMismatch(f"expected coefficient vectors of length {n}")
        return eta @ self.K_matrix @ xi

    def coercivity_constants(self):
        """Smallest generalized eigenvalues of ``K`` against the H2 and W12 Grams.

        Returns
        -------
        c0, alpha : float
        """
        c0 = eigh(self.K_matrix, self.gram_h2, eigvals_only=True)[0]
        alpha = eigh(self.K_matrix, self.gram_w12, eigvals_only=True)[0]
        if c0 <= 0.0 or alpha <= 0.0:
            raise NotCoercive(f"Koiter form not coercive (c0={c0:.3e}, alpha={alpha:.3e})")
        return float(c0), float(alpha)

    def spectrum(self):
        return eigh(self.K_matrix, self.mass, eigvals_only=True)


@dataclass(frozen=True)
class ShellBatch:
    """Several shell fields ``xi_k = sum_j C[k, j] beta_j`` evaluated together.

    ``value`` returns shape (..., k) and ``grad`` shape (..., k, 2).
    """

    basis: ShellBasis
    coeffs: np.ndarray

    @classmethod
    def modes(cls, basis, which=None):
        eye = np.eye(basis.size)
        return cls(basis, eye if which is None else eye[list(which)])

    @property
    def count(self):
        return self.coeffs.shape[0]

    def value(self, y):
        return self.basis.evaluate(y, 0) @ self.coeffs.T

    def grad(self, y):
        _, g = self.basis.evaluate(y, 1)
        return np.einsum("...jd,kj->...kd", g, self.coeffs)
