"""Coefficient states and trajectories of the Galerkin system.

The Galerkin unknowns are ``eta_n = sum a_k X_k`` on the shell and
``u_n = sum a_k' X_k`` in the fluid.  Positions ``a_k`` of members whose
trace on ``omega`` vanishes enter neither the shell displacement nor any
term of the system, so the evolution is closed on the reduced state
``x = (a[active], a')``.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["StateVector", "Trajectory"]


@dataclass(frozen=True)
class StateVector:
    """Positions ``a`` (length n) and velocities ``a_dot`` (length n)."""

    a: np.ndarray
    a_dot: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        ad = np.asarray(self.a_dot, dtype=float)
        if a.shape != ad.shape:
            raise ValueError("positions and velocities must have the same shape")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(ad))):
            raise ValueError("state has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_dot", ad)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def pack(self, active):
        """First-order reduced vector ``(a[active], a_dot)``."""
        return np.concatenate([self.a[active], self.a_dot])

    @classmethod
    def unpack(cls, x, active, n):
        a = np.zeros(n)
        k = len(active)
        a[active] = x[:k]
        return cls(a, np.asarray(x[k:], dtype=float))


@dataclass(frozen=True)
class Trajectory:
    """States on the uniform step grid ``t_j = j dt``, ``j = 0..S``."""

    times: np.ndarray
    a: np.ndarray
    a_dot: np.ndarray

    @property
    def steps(self):
        return len(self.times) - 1

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def state(self, j):
        return StateVector(self.a[j], self.a_dot[j])

    def midpoint_velocities(self):
        return 0.5 * (self.a_dot[1:] + self.a_dot[:-1])
