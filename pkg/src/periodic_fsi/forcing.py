"""Time-periodic forcing data: body force, shell load and face pressure."""

from dataclasses import dataclass, field

import numpy as np

from .quadrature import composite

__all__ = ["TimeProfile", "ForcingSpec"]

_KINDS = ("zero", "const", "sin", "cos", "table")


@dataclass(frozen=True)
class TimeProfile:
    """Scalar periodic time profile.

    ``sin`` and ``cos`` mean ``amplitude * sin(2 pi k t / T + phase)``; a
    ``table`` is interpolated linearly and periodically from
    ``(times, values)`` samples on ``[0, T)``.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    harmonic: int = 1
    phase: float = 0.0
    table: tuple = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "table" and self.table is None:
            raise ValueError("table profile needs (times, values)")

    def __call__(self, t, period):
        t = np.asarray(t, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "const":
            return np.full_like(t, self.amplitude)
        arg = 2.0 * np.pi * self.harmonic * t / period + self.phase
        if self.kind == "sin":
            return self.amplitude * np.sin(arg)
        if self.kind == "cos":
            return self.amplitude * np.cos(arg)
        times, values = (np.asarray(a, dtype=float) for a in self.table)
        return np.interp(np.mod(t, period), times, values, period=period)

    def scaled(self, factor):
        if self.kind == "table":
            times, values = self.table
            return TimeProfile("table", table=(tuple(times), tuple(np.multiply(values, factor))))
        return TimeProfile(self.kind, self.amplitude * factor, self.harmonic, self.phase)

    def mean_square(self, period, n=64):
        """``(1/T) int_0^T p(t)^2 dt``."""
        t, w = composite(np.linspace(0.0, period, 9), n // 8)
        return float(w @ self(t, period) ** 2 / period)


@dataclass(frozen=True)
class ForcingSpec:
    """Forcing of the coupled problem.

    Parameters
    ----------
    period : float
        Period ``T``.
    f_profile, f_direction
        Spatially uniform body force ``f(t, x) = f_profile(t) f_direction``.
    g_profile : TimeProfile
        Spatially uniform shell load ``g(t, y)``.
    p_in, p_out : TimeProfile
        Pressure datum on the faces ``y1 = 0`` and ``y1 = 1``.
    """

    period: float = 1.0
    f_profile: TimeProfile = field(default_factory=TimeProfile)
    f_direction: tuple = (1.0, 0.0, 0.0)
    g_profile: TimeProfile = field(default_factory=TimeProfile)
    p_in: TimeProfile = field(default_factory=TimeProfile)
    p_out: TimeProfile = field(default_factory=TimeProfile)

    def __post_init__(self):
        if not self.period > 0.0:
            raise ValueError("period must be positive")

    @property
    def is_zero(self):
        return all(
            p.kind == "zero" or (p.kind != "table" and p.amplitude == 0.0)
            for p in (self.f_profile, self.g_profile, self.p_in, self.p_out)
        )

    def body(self, t):
        return self.f_profile(t, self.period) * np.asarray(self.f_direction, dtype=float)

    def shell(self, t):
        return float(self.g_profile(t, self.period))

    def pressure(self, t):
        return float(self.p_in(t, self.period)), float(self.p_out(t, self.period))

    def scaled(self, factor):
        return ForcingSpec(
            self.period,
            self.f_profile.scaled(factor),
            self.f_direction,
            self.g_profile.scaled(factor),
            self.p_in.scaled(factor),
            self.p_out.scaled(factor),
        )

    def norms(self, volume=1.0, lid_area=1.0, face_area=1.0):
        """``L2_t L2_x`` norms of ``f``, ``g`` and ``P``.

        ``volume``, ``lid_area`` and ``face_area`` (area of one pressure
        face) are the spatial measures over which the uniform data act.
        """
        T = self.period
        fdir = float(np.dot(self.f_direction, self.f_direction))
        nf = np.sqrt(T * self.f_profile.mean_square(T) * fdir * volume)
        ng = np.sqrt(T * self.g_profile.mean_square(T) * lid_area)
        npr = np.sqrt(T * (self.p_in.mean_square(T) + self.p_out.mean_square(T)) * face_area)
        return {"f": float(nf), "g": float(ng), "P": float(npr)}
