import numpy as np
import pytest

from crackfreq.exact import BesselMode, CrackHarmonic
from crackfreq.fem import Potential, interpolate, solve_problem
from crackfreq.slitmesh import make_slit_disk, make_slit_sphere


@pytest.fixture(scope="session")
def ref_mesh():
    return make_slit_disk(1.0, 8, 0.5, 64)


@pytest.fixture(scope="session")
def coarse_mesh():
    return make_slit_disk(1.0, 4, 0.5, 32)


@pytest.fixture(scope="session")
def sphere64():
    return make_slit_sphere(64)


@pytest.fixture(scope="session")
def harmonic_fem(ref_mesh):
    u = CrackHarmonic(1)
    return solve_problem(ref_mesh, Potential("constant", 0.0), u.value)


@pytest.fixture(scope="session")
def bessel_fem(ref_mesh):
    b = BesselMode(1, 1.0)
    return solve_problem(ref_mesh, Potential("constant", 1.0), b.value)


@pytest.fixture(scope="session")
def harmonic_interp(ref_mesh):
    return interpolate(ref_mesh, CrackHarmonic(1).value)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
