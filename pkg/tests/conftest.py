import numpy as np
import pytest

from surropt.fem import build_mesh
from surropt.field import build_field
from surropt.objective import make_problem_data


@pytest.fixture(scope="session")
def data8():
    """Default desk-scale problem: 8 subdivisions, 4 stochastic dimensions."""
    mesh = build_mesh(8)
    return make_problem_data(mesh, build_field(mesh, s=4))


@pytest.fixture(scope="session")
def data3():
    """Tiny problem for finite-difference sweeps: 4 DOFs, 2 stochastic dims."""
    mesh = build_mesh(3)
    return make_problem_data(mesh, build_field(mesh, s=2))


@pytest.fixture()
def rng():
    return np.random.default_rng(20260822)
