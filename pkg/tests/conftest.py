import numpy as np
import pytest
from hypothesis import settings

from calderon_lab.dyadic import build_dyadic, build_nets
from calderon_lab.operators import (
    build_haar_family,
    build_smoothed_family,
)
from calderon_lab.space import space_from_coords

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")


def unit_grid(n):
    x = np.linspace(0.0, 1.0, n)
    return space_from_coords(x[:, None], weights=[1.0 / n] * n)


@pytest.fixture(scope="session")
def grid8():
    return unit_grid(8)


@pytest.fixture(scope="session")
def grid16():
    return unit_grid(16)


@pytest.fixture(scope="session")
def grid32():
    return unit_grid(32)


@pytest.fixture(scope="session")
def system8(grid8):
    return build_dyadic(build_nets(grid8, 0.5), grid8)


@pytest.fixture(scope="session")
def system16(grid16):
    return build_dyadic(build_nets(grid16, 0.5), grid16)


@pytest.fixture(scope="session")
def system32(grid32):
    return build_dyadic(build_nets(grid32, 0.5), grid32)


@pytest.fixture(scope="session")
def haar_hom8(system8):
    return build_haar_family(system8, "homogeneous")


@pytest.fixture(scope="session")
def haar_inhom8(system8):
    return build_haar_family(system8, "inhomogeneous")


@pytest.fixture(scope="session")
def haar_hom16(system16):
    return build_haar_family(system16, "homogeneous")


@pytest.fixture(scope="session")
def smooth_hom32(system32):
    return build_smoothed_family(system32, "homogeneous")


@pytest.fixture(scope="session")
def smooth_inhom32(system32):
    return build_smoothed_family(system32, "inhomogeneous")
