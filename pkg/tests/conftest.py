import math

import numpy as np
import pytest

from traparray import geometry
from traparray.field import DriveConfig


@pytest.fixture(scope="session")
def point_trap():
    return geometry.make_point_trap(0.5e-3, 1.0e-3, 50e-6)


@pytest.fixture(scope="session")
def point_trap_gp():
    return geometry.make_point_trap(0.5e-3, 1.0e-3, 50e-6, ground_plane_height=1.5e-3)


@pytest.fixture(scope="session")
def array2x2():
    return geometry.make_addressable_array(geometry.array2x2_params())


@pytest.fixture(scope="session")
def drive10():
    return DriveConfig(100.0, 2 * math.pi * 10e6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
