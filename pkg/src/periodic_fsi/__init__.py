"""Galerkin solver for time-periodic fluid-structure interaction.

An incompressible viscous fluid fills a box whose curved upper face is an
elastic Koiter shell.  The package builds the divergence-free Galerkin
basis on the moving domain, integrates the resulting linear periodic
system, recovers the coupling through an outer fixed point, and checks the
a priori energy estimates on every computed solution.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BudgetExceeded,
    DomainDegeneration,
    FSIError,
    LeftAdmissibleSet,
    NearResonance,
    NoConvergence,
    SchemaError,
)
from .geometry import Geometry  # noqa: E402
from .profiles import LidProfile  # noqa: E402
from .shell import KoiterOperator, ShellBasis  # noqa: E402

__all__ = [
    "__version__",
    "Geometry",
    "LidProfile",
    "ShellBasis",
    "KoiterOperator",
    "FSIError",
    "SchemaError",
    "NearResonance",
    "DomainDegeneration",
    "LeftAdmissibleSet",
    "BudgetExceeded",
    "NoConvergence",
]
