"""Lid height profiles and smooth transition functions.

A lid profile is a scalar function ``h`` on the unit square which vanishes
together with its gradient on the boundary.  Profiles are written once as
symbolic expressions and differentiated symbolically, so the gradient and
Hessian used by the geometry are exact.
"""

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

_Y1, _Y2 = sp.symbols("y1 y2", real=True)


def smoothstep(t, deriv=0):
    """Quintic smoothstep ``6t^5 - 15t^4 + 10t^3`` clamped to [0, 1].

    It is C2 with exact plateaus; ``deriv`` selects derivatives 0..3.
    """
    t = np.asarray(t, dtype=float)
    tc = np.clip(t, 0.0, 1.0)
    inside = (t > 0.0) & (t < 1.0)
    if deriv == 0:
        return tc**3 * (10.0 - 15.0 * tc + 6.0 * tc**2)
    if deriv == 1:
        return np.where(inside, 30.0 * tc**2 * (1.0 - tc) ** 2, 0.0)
    if deriv == 2:
        return np.where(inside, 60.0 * tc * (1.0 - tc) * (1.0 - 2.0 * tc), 0.0)
    if deriv == 3:
        return np.where(inside, 60.0 * (1.0 - 6.0 * tc + 6.0 * tc**2), 0.0)
    raise ValueError("deriv must be 0..3")


@dataclass(frozen=True)
class PolyBump:
    """Normalized bump ``c (t(1-t))^4`` on ``(a, b)`` with unit integral.

    The antiderivative is exact (polynomial), which is what the flux
    bookkeeping of the extension operator relies on.
    """

    a: float
    b: float

    def _t(self, x):
        return (np.asarray(x, dtype=float) - self.a) / (self.b - self.a)

    @property
    def _scale(self):
        # int_0^1 (t(1-t))^4 dt = 1/630
        return 630.0 / (self.b - self.a)

    def __call__(self, x):
        t = self._t(x)
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, self._scale * (t * (1.0 - t)) ** 4, 0.0)

    def deriv(self, x):
        t = self._t(x)
        inside = (t > 0.0) & (t < 1.0)
        u = t * (1.0 - t)
        return np.where(inside, self._scale * 4.0 * u**3 * (1.0 - 2.0 * t), 0.0) / (
            self.b - self.a
        )

    def cumulative(self, x):
        """``int_{-inf}^x`` of the bump, in [0, 1]."""
        t = np.clip(self._t(x), 0.0, 1.0)
        # antiderivative of 630 (t - t^2)^4
        poly = np.polynomial.Polynomial([0, 1, -1]) ** 4 * 630.0
        return poly.integ()(t)


def _sin2_expr(amplitude, power=2):
    return amplitude * sp.sin(sp.pi * _Y1) ** power * sp.sin(sp.pi * _Y2) ** power


def _cap_expr(radius, r_in, r_out):
    r2 = (_Y1 - sp.Rational(1, 2)) ** 2 + (_Y2 - sp.Rational(1, 2)) ** 2
    r = sp.sqrt(r2)
    sphere = sp.sqrt(radius**2 - r2) - sp.sqrt(radius**2 - r_out**2)
    t = (r - r_in) / (r_out - r_in)
    blend = 1 - (6 * t**5 - 15 * t**4 + 10 * t**3)
    return sp.Piecewise((sphere, r <= r_in), (sphere * blend, r < r_out), (0, True))


@dataclass
class LidProfile:
    """Symbolically differentiated lid height ``h(y)``.

    Parameters
    ----------
    name : str
        ``"flat"``, ``"sin2"``, ``"sin4"`` or ``"cap"``.
    amplitude : float
        Peak height for the trigonometric profiles.
    radius : float
        Sphere radius of the ``"cap"`` profile; the cap matches the sphere
        exactly for ``r < 0.2`` around the centre and blends to zero by
        ``r = 0.45``.
    """

    name: str = "flat"
    amplitude: float = 0.0
    radius: float = 2.0
    _funcs: tuple = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.name == "flat":
            expr = sp.Integer(0)
        elif self.name == "sin2":
            expr = _sin2_expr(self.amplitude, 2)
        elif self.name == "sin4":
            expr = _sin2_expr(self.amplitude, 4)
        elif self.name == "cap":
            if self.radius <= 0.5:
                raise ValueError("cap radius must exceed 0.5")
            expr = _cap_expr(self.radius, 0.2, 0.45)
        else:
            raise ValueError(f"unknown lid profile {self.name!r}")
        grads = [sp.diff(expr, v) for v in (_Y1, _Y2)]
        hess = [sp.diff(expr, _Y1, 2), sp.diff(expr, _Y1, _Y2), sp.diff(expr, _Y2, 2)]
        mk = lambda e: sp.lambdify((_Y1, _Y2), e, modules="numpy")  # noqa: E731
        self._funcs = (mk(expr), [mk(g) for g in grads], [mk(e) for e in hess])
        self.is_flat = self.name == "flat" or (
            self.name in ("sin2", "sin4") and self.amplitude == 0.0
        )

    def evaluate(self, y):
        """Return ``h``, ``grad h`` (..., 2) and ``hess h`` (..., 2, 2).

        Points outside the closed unit square get the zero extension.
        """
        y = np.asarray(y, dtype=float)
        shape = y.shape[:-1]
        h = np.zeros(shape)
        g = np.zeros(shape + (2,))
        H = np.zeros(shape + (2, 2))
        if self.is_flat:
            return h, g, H
        inside = np.all((y >= 0.0) & (y <= 1.0), axis=-1)
        if not np.any(inside):
            return h, g, H
        y1, y2 = y[inside, 0], y[inside, 1]
        f, fg, fh = self._funcs
        with np.errstate(invalid="ignore", divide="ignore"):
            full = lambda fn: np.broadcast_to(fn(y1, y2), y1.shape)  # noqa: E731
            h[inside] = full(f)
            g[inside, 0] = full(fg[0])
            g[inside, 1] = full(fg[1])
            h11, h12, h22 = full(fh[0]), full(fh[1]), full(fh[2])
        H[inside, 0, 0] = h11
        H[inside, 0, 1] = h12
        H[inside, 1, 0] = h12
        H[inside, 1, 1] = h22
        return h, g, H
