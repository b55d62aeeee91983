import numpy as np
import pytest

from mfgtubes.model import ModelParams
from mfgtubes.spectral import eigen_basis, find_equilibria


@pytest.fixture(scope="session")
def sc_params():
    """Saddle x center parameter set used throughout the phase-space work."""
    return ModelParams(sigma=1.0, mu=2.0, g=4.0, h=0.0, alpha=3.0, epsilon=0.05)


@pytest.fixture(scope="session")
def ss_params():
    """Saddle x saddle parameter set (interaction exponent 1)."""
    return ModelParams(sigma=1.0, mu=2.0, g=4.0, h=0.0, alpha=1.0, epsilon=0.05)


@pytest.fixture(scope="session")
def sc_equilibrium(sc_params):
    eqs = find_equilibria(sc_params, (1.0, 10.0))
    assert len(eqs) == 1
    return eqs[0]


@pytest.fixture(scope="session")
def ss_equilibrium(ss_params):
    eqs = find_equilibria(ss_params, (1.0, 50.0))
    assert len(eqs) == 1
    return eqs[0]


@pytest.fixture(scope="session")
def sc_basis(sc_equilibrium):
    return eigen_basis(sc_equilibrium)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
