"""Sampling of vector fields on deformed domains.

Fields are described by functions of reference chart points ``X`` in the
unit cube that return physical vectors at ``Theta(Psi(X))``.  Gradients with
respect to physical coordinates follow from central differences in ``X`` and
the chain rule with the analytic Jacobian of ``Theta o Psi``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DomainSample:
    """Quadrature of ``Omega_delta`` pulled back to the unit cube."""

    X: np.ndarray
    Xs: np.ndarray
    x: np.ndarray
    w: np.ndarray
    jac: np.ndarray
    jac_inv: np.ndarray

    @property
    def size(self):
        return len(self.w)

    def subset(self, mask):
        return DomainSample(
            self.X[mask], self.Xs[mask], self.x[mask], self.w[mask],
            self.jac[mask], self.jac_inv[mask],
        )


def sample_domain(geom, delta=None, n_y=None, n_z=None):
    X, Xs, x, w, jac = geom.deformed_quadrature(delta, n_y, n_z)
    return DomainSample(X, Xs, x, w, jac, np.linalg.inv(jac))


def evaluate_with_gradient(sample, fn, h=1e-6, order=2):
    """Values and physical gradients of a field given on reference points.

    Parameters
    ----------
    sample : DomainSample
    fn : callable
        Maps reference points (m, 3) to physical vectors (m, ..., 3).
    h : float
        Difference step in reference coordinates.
    order : {2, 4}
        Order of the central difference stencil.

    Returns
    -------
    values : ndarray, shape (nq, ..., 3)
    grads : ndarray, shape (nq, ..., 3, 3)
        ``grads[..., i, j] = d u_i / d x_j``.
    """
    if order == 2:
        offsets, coefs = (1.0, -1.0), (0.5, -0.5)
    elif order == 4:
        offsets, coefs = (2.0, 1.0, -1.0, -2.0), (-1 / 12, 2 / 3, -2 / 3, 1 / 12)
    else:
        raise ValueError("order must be 2 or 4")
    X = sample.X
    nq = len(X)
    stack = [X]
    for d in range(3):
        for o in offsets:
            e = np.zeros(3)
            e[d] = o * h
            stack.append(X + e)
    allvals = fn(np.concatenate(stack, axis=0))
    vals = allvals[:nq]
    dG = np.zeros(vals.shape + (3,))
    k = 1
    for d in range(3):
        for c in coefs:
            dG[..., d] += c * allvals[k * nq:(k + 1) * nq]
            k += 1
        dG[..., d] /= h
    extra = vals.ndim - 2
    jinv = sample.jac_inv.reshape((nq,) + (1,) * extra + (3, 3))
    grads = np.einsum("...id,...dj->...ij", dG, jinv)
    return vals, grads


def divergence(grads):
    return np.trace(grads, axis1=-2, axis2=-1)


def l2_norm(sample, values):
    """``L2(Omega_delta)`` norm over the first axis (extra axes kept)."""
    sq = values**2
    while sq.ndim > 2:
        sq = sq.sum(axis=-1)
    if sq.ndim == 1:
        return float(np.sqrt(np.sum(sample.w * sq)))
    return np.sqrt(np.einsum("q,q...->...", sample.w, sq))


def piola_from_chart(geom, Xs, Fhat):
    """Physical field ``grad Theta Fhat / det Theta`` at chart points ``Xs``."""
    _, jac, det = geom.chart(Xs)
    extra = Fhat.ndim - Xs.ndim
    shape = (len(Xs),) + (1,) * extra
    return np.einsum("...ij,...j->...i", jac.reshape(shape + (3, 3)), Fhat) / det.reshape(
        shape + (1,)
    )
