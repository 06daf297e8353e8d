"""Run configuration: YAML schema, validation and a stable hash.

A config file is a YAML mapping with the sections below; every key is
optional and missing keys take the defaults of the dataclasses.

.. code-block:: yaml

    geometry: {profile: sin2, amplitude: 0.05, L: 0.2}
    shell: {n1d: 3, m: 1.0}
    basis: {n: 4}
    time: {period: 1.0, nodes: 256}
    forcing:
      p_in: {kind: sin, amplitude: 0.01}
      relative_to_budget: true
    coupling: {rho: 1.0, tol: 1.0e-6}

Validation collects every problem before raising, so a single
:class:`SchemaError` lists all offending field paths.
"""

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import SchemaError

__all__ = [
    "GeometryConfig",
    "ShellConfig",
    "BasisConfig",
    "TimeConfig",
    "ProfileConfig",
    "ForcingConfig",
    "PhysicsConfig",
    "SolverConfig",
    "CouplingConfig",
    "CauchyConfig",
    "ToleranceConfig",
    "RunConfig",
    "parse_config",
    "config_from_dict",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeometryConfig:
    profile: str = "flat"
    amplitude: float = 0.0
    radius: float = 2.0
    L: float = 0.2
    n_y: int = 3
    n_z: int = 3
    n_collar: int = 6
    n_surface: int = 8


@dataclass(frozen=True)
class ShellConfig:
    """Koiter data; ``m`` wins over the Lamé-derived bending coefficient."""

    n1d: int = 3
    m: float = None
    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    thickness: float = None
    b2: list = field(default_factory=lambda: [[0.0, 0.0], [0.0, 0.0]])
    b0: float = 0.0
    membrane: bool = False


@dataclass(frozen=True)
class BasisConfig:
    n: int = 4
    n_y: int = 2
    n_z: int = 2
    cond_max: float = 1e8


@dataclass(frozen=True)
class TimeConfig:
    period: float = 1.0
    nodes: int = 256
    refine: int = 1


@dataclass(frozen=True)
class ProfileConfig:
    """Scalar time profile; ``csv`` names a two-column ``t,value`` file."""

    kind: str = "zero"
    amplitude: float = 0.0
    harmonic: int = 1
    phase: float = 0.0
    times: list = None
    values: list = None
    csv: str = None


@dataclass(frozen=True)
class ForcingConfig:
    """Forcing profiles; with ``relative_to_budget`` amplitudes are multiples of ``C_tilde``."""

    f: ProfileConfig = field(default_factory=ProfileConfig)
    f_direction: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    g: ProfileConfig = field(default_factory=ProfileConfig)
    p_in: ProfileConfig = field(default_factory=ProfileConfig)
    p_out: ProfileConfig = field(default_factory=ProfileConfig)
    relative_to_budget: bool = False


@dataclass(frozen=True)
class PhysicsConfig:
    viscosity: float = 1.0
    fluid_density: float = 1.0
    shell_density: float = 1.0


@dataclass(frozen=True)
class SolverConfig:
    """Decoupled periodic solve; ``delta_amplitude`` prescribes a moving lid."""

    method: str = "monodromy"
    rho: float = 0.5
    tol: float = 1e-10
    max_iter: int = 5000
    resonance_cap: float = 1e8
    boundary_term: bool = False
    delta_amplitude: float = 0.005


@dataclass(frozen=True)
class CouplingConfig:
    rho: float = 1.0
    tol: float = 1e-6
    max_iter: int = 50
    theta: float = 0.5
    adm_fraction: float = 0.5


@dataclass(frozen=True)
class CauchyConfig:
    """Initial-value run; ``a0``/``a_dot0`` default to rest."""

    horizon: float = 1.0
    refine: int = 4
    a0: list = None
    a_dot0: list = None
    guard_fraction: float = 0.5


@dataclass(frozen=True)
class ToleranceConfig:
    periodic: float = 1e-8
    divergence: float = 1e-6
    trace: float = 1e-8
    surface: float = 1e-6
    balance_ratio_low: float = 3.0
    balance_ratio_high: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    shell: ShellConfig = field(default_factory=ShellConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    cauchy: CauchyConfig = field(default_factory=CauchyConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    seed: int = 0
    output: str = "out"
    base_dir: str = field(default=".", compare=False)

    def as_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def hash(self):
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.as_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def with_section(self, name, **kwargs):
        return dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name), **kwargs)})


# ------------------------------------------------------------ validation
_SCALAR = {int: "an integer", float: "a number", bool: "a boolean", str: "a string"}


def _field_type(f):
    t = f.type
    if isinstance(t, str):
        t = {"int": int, "float": float, "bool": bool, "str": str, "list": list}.get(t, t)
    return t


def _coerce(value, kind, path, problems):
    if value is None:
        return None
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if math.isfinite(value):
                return float(value)
            problems.append(f"{path}: must be finite")
            return None
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif kind is str:
        if isinstance(value, str):
            return value
    elif kind is list:
        if isinstance(value, list):
            return value
        problems.append(f"{path}: must be a list")
        return None
    problems.append(f"{path}: must be {_SCALAR.get(kind, kind)}")
    return None


def _build(cls, data, path, problems, warnings, strict):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{path or '<root>'}: must be a mapping")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    kwargs = {}
    for key, value in data.items():
        p = f"{path}.{key}" if path else str(key)
        if key not in fields:
            (problems if strict else warnings).append(f"{p}: unknown key")
            continue
        f = fields[key]
        kind = _field_type(f)
        if dataclasses.is_dataclass(kind):
            kwargs[key] = _build(kind, value, p, problems, warnings, strict)
            continue
        v = _coerce(value, kind, p, problems)
        if v is not None or value is None:
            kwargs[key] = v
    return cls(**kwargs)


def _positive(value, path, problems, allow_none=False):
    if value is None and allow_none:
        return
    if value is None or not value > 0:
        problems.append(f"{path}: must be positive")


def _check_profile(pc, path, problems):
    from .forcing import _KINDS

    if pc.kind not in _KINDS:
        problems.append(f"{path}.kind: must be one of {', '.join(_KINDS)}")
    if pc.kind == "table" and pc.csv is None and (pc.times is None or pc.values is None):
        problems.append(f"{path}: table profile needs times/values or csv")
    if pc.times is not None and pc.values is not None and len(pc.times) != len(pc.values):
        problems.append(f"{path}: times and values differ in length")
    if pc.harmonic < 0:
        problems.append(f"{path}.harmonic: must be non-negative")


def _semantic(cfg, problems):
    g, s, b, t = cfg.geometry, cfg.shell, cfg.basis, cfg.time
    if g.profile not in ("flat", "sin2", "sin4", "cap"):
        problems.append("geometry.profile: must be one of flat, sin2, sin4, cap")
    _positive(g.L, "geometry.L", problems)
    for name in ("n_y", "n_z", "n_collar", "n_surface"):
        _positive(getattr(g, name), f"geometry.{name}", problems)
    _positive(s.n1d, "shell.n1d", problems)
    _positive(s.m, "shell.m", problems, allow_none=True)
    _positive(s.thickness, "shell.thickness", problems, allow_none=True)
    _positive(s.lame_mu, "shell.lame_mu", problems)
    if s.lame_lambda is not None and s.lame_mu is not None and not s.lame_lambda + 2 * s.lame_mu > 0:
        problems.append("shell.lame_lambda: lambda + 2 mu must be positive")
    b2 = np.asarray(s.b2, dtype=float) if s.b2 is not None else None
    if b2 is None or b2.shape != (2, 2) or not np.allclose(b2, b2.T):
        problems.append("shell.b2: must be a symmetric 2x2 matrix")
    if b.n is not None and (b.n < 2 or b.n % 2):
        problems.append("basis.n: must be even and at least 2")
    elif b.n is not None and s.n1d is not None and b.n // 2 > s.n1d**2:
        problems.append("basis.n: exceeds twice the number of shell modes")
    _positive(b.n_y, "basis.n_y", problems)
    _positive(b.n_z, "basis.n_z", problems)
    _positive(t.period, "time.period", problems)
    if t.nodes is None or t.nodes < 2 or (t.nodes & (t.nodes - 1)):
        problems.append("time.nodes: must be a power of two (at least 2)")
    _positive(t.refine, "time.refine", problems)
    fc = cfg.forcing
    for name in ("f", "g", "p_in", "p_out"):
        _check_profile(getattr(fc, name), f"forcing.{name}", problems)
    if fc.f_direction is None or len(fc.f_direction) != 3:
        problems.append("forcing.f_direction: must have three components")
    for name in ("viscosity", "fluid_density", "shell_density"):
        _positive(getattr(cfg.physics, name), f"physics.{name}", problems)
    sv = cfg.solver
    if sv.method not in ("monodromy", "picard"):
        problems.append("solver.method: must be monodromy or picard")
    if sv.rho is None or not 0 < sv.rho <= 1:
        problems.append("solver.rho: must lie in (0, 1]")
    _positive(sv.tol, "solver.tol", problems)
    _positive(sv.resonance_cap, "solver.resonance_cap", problems)
    if sv.boundary_term and sv.method != "picard":
        problems.append("solver.boundary_term: requires method picard")
    cp = cfg.coupling
    if cp.rho is None or not 0 < cp.rho <= 1:
        problems.append("coupling.rho: must lie in (0, 1]")
    if cp.theta is None or not 0 < cp.theta < 1:
        problems.append("coupling.theta: must lie in (0, 1)")
    if cp.adm_fraction is None or not 0 < cp.adm_fraction <= 0.5:
        problems.append("coupling.adm_fraction: must lie in (0, 0.5]")
    _positive(cp.tol, "coupling.tol", problems)
    _positive(cp.max_iter, "coupling.max_iter", problems)
    ca = cfg.cauchy
    _positive(ca.horizon, "cauchy.horizon", problems)
    _positive(ca.refine, "cauchy.refine", problems)
    for name in ("a0", "a_dot0"):
        v = getattr(ca, name)
        if v is not None and b.n is not None and len(v) != b.n:
            problems.append(f"cauchy.{name}: must have basis.n entries")
    if ca.guard_fraction is None or not 0 < ca.guard_fraction <= 0.5:
        problems.append("cauchy.guard_fraction: must lie in (0, 0.5]")
    for f in dataclasses.fields(cfg.tolerances):
        _positive(getattr(cfg.tolerances, f.name), f"tolerances.{f.name}", problems)
    if cfg.seed is None or cfg.seed < 0:
        problems.append("seed: must be a non-negative integer")


def config_from_dict(data, strict=True, base_dir="."):
    """Validate a mapping and build a :class:`RunConfig`.

    Raises
    ------
    SchemaError
        Listing every problem found, each prefixed by its field path.
    """
    problems, warnings = [], []
    cfg = _build(RunConfig, data, "", problems, warnings, strict)
    try:
        _semantic(cfg, problems)
    except (TypeError, ValueError) as exc:
        problems.append(f"<semantic>: {exc}")
    for w in warnings:
        log.warning("ignored config entry %s", w)
    if problems:
        raise SchemaError(problems)
    return dataclasses.replace(cfg, base_dir=str(base_dir))


def parse_config(path, strict=True):
    """Read and validate a YAML config file."""
    if not os.path.exists(path):
        raise SchemaError([f"{path}: config file not found"])
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError([f"{path}: not valid YAML ({exc})"]) from exc
    return config_from_dict(data or {}, strict, os.path.dirname(os.path.abspath(path)))
