import numpy as np
import pytest

from periodic_fsi.geometry import Geometry
from periodic_fsi.profiles import LidProfile
from periodic_fsi.shell import ShellBasis


@pytest.fixture(scope="session")
def flat_geom():
    return Geometry(LidProfile("flat"), L=0.2)


@pytest.fixture(scope="session")
def curved_geom():
    return Geometry(LidProfile("sin2", 0.1), L=0.1)


@pytest.fixture(scope="session")
def shell3():
    return ShellBasis(3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
