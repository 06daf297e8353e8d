"""Gauss-Legendre rules on intervals, composite rules and tensor grids."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss(n, a=0.0, b=1.0):
    """Nodes and weights of the ``n``-point Gauss-Legendre rule on ``[a, b]``."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite(breaks, n):
    """Composite Gauss rule with ``n`` nodes on each panel of ``breaks``.

    ``n`` may also be a sequence giving the node count of every panel.
    """
    breaks = np.unique(np.asarray(breaks, dtype=float))
    counts = np.broadcast_to(np.asarray(n, dtype=int), (len(breaks) - 1,))
    xs, ws = [], []
    for a, b, m in zip(breaks[:-1], breaks[1:], counts):
        x, w = gauss(int(m), a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def tensor2(x1, w1, x2, w2):
    """Flattened tensor grid; points have shape (n1*n2, 2)."""
    a, b = np.meshgrid(x1, x2, indexing="ij")
    wa, wb = np.meshgrid(w1, w2, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=-1), (wa * wb).ravel()


def tensor3(x1, w1, x2, w2, x3, w3):
    a, b, c = np.meshgrid(x1, x2, x3, indexing="ij")
    wa, wb, wc = np.meshgrid(w1, w2, w3, indexing="ij")
    pts = np.stack([a.ravel(), b.ravel(), c.ravel()], axis=-1)
    return pts, (wa * wb * wc).ravel()


def cumulative(f, upper, n=24, lower=0.0):
    """Integrate ``f`` from ``lower`` to each entry of ``upper``.

    ``f`` receives an array of shape ``upper.shape + (n,)`` and must return
    values of the same shape (extra trailing axes are allowed).
    """
    upper = np.asarray(upper, dtype=float)
    x, w = _leggauss(n)
    half = 0.5 * (upper - lower)
    t = lower + half[..., None] * (x + 1.0)
    vals = f(t)
    extra = vals.ndim - t.ndim
    wt = (half[..., None] * w)
    wt = wt.reshape(wt.shape + (1,) * extra)
    return np.sum(vals * wt, axis=upper.ndim)
