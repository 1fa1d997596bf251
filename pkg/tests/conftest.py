"""Shared systems. Session-scoped because certification and stiff
simulations are the expensive parts of the suite."""
import numpy as np
import pytest
from hypothesis import settings

from phstab.models import mass_spring_damper
from phstab.pera import build_pera, pera_scenarios
from phstab.pidpbc import GainSet, build_closed_loop
from phstab.plvcc import CanonicalPHSystem, to_canonical
from phstab.region import Region

settings.register_profile("suite", deadline=None, max_examples=40)
settings.load_profile("suite")


def central_diff(f, x, h=1e-6):
    """Plain central differences, stacked along axis 0 (independent of phstab.core)."""
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.array(out)


@pytest.fixture(scope="session")
def pera():
    return build_pera()


@pytest.fixture(scope="session")
def scenarios():
    return pera_scenarios()


@pytest.fixture(scope="session")
def s1_loop(pera, scenarios):
    return build_closed_loop(pera, scenarios[0]["S1"])


@pytest.fixture(scope="session")
def s1_canonical(s1_loop):
    return to_canonical(s1_loop)


@pytest.fixture(scope="session")
def pera_region():
    return Region.uniform(3, 0.3, 0.5)


@pytest.fixture(scope="session")
def benchmark_1dof():
    """M = 1, U = 2 q^2, D = 1 in canonical form (A = 1)."""
    return CanonicalPHSystem.quadratic(1.0, 1.0, 4.0)


@pytest.fixture(scope="session")
def unit_box_1dof():
    return Region.uniform(1, 1.0, 1.0)


@pytest.fixture(scope="session")
def msd():
    return mass_spring_damper()


@pytest.fixture
def msd_gains():
    return GainSet(1.0, 8.0, 0.0, [0.0])
