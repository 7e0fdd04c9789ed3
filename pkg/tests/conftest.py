import numpy as np
import pytest
from fem.grid import build_mesh_pair
from msreduction.cem import build_basis
from problems.permeability import synthetic_kappa
from services.printr import Printr


@pytest.fixture(autouse=True)
def quiet_printr():
    printr = Printr()
    previous = printr.verbosity
    printr.set_verbosity("quiet")
    yield
    printr.set_verbosity(previous)


@pytest.fixture
def tiny_mesh():
    return build_mesh_pair(2, 3)


@pytest.fixture(scope="session")
def small_mesh():
    return build_mesh_pair(3, 4)


@pytest.fixture(scope="session")
def small_kappa(small_mesh):
    return synthetic_kappa(small_mesh, {"inclusion": 100.0, "channels": 1, "inclusions": 3, "seed": 3})


@pytest.fixture(scope="session")
def small_basis(small_mesh, small_kappa):
    return build_basis(small_mesh, small_kappa, modes=2, ell=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
