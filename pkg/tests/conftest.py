import math

import numpy as np
import pytest
from hypothesis import settings

from floqising.circuit import QuenchSpec
from floqising.lattice import Lattice

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

THETA_MIN = -math.pi / 6
INTERMEDIATE = THETA_MIN + 2 * math.pi / 9


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def quench(nx, ny, steps, *, theta=THETA_MIN, dt=0.25, J=-1.0, h=2.0):
    return QuenchSpec.uniform(Lattice(nx, ny), J, h, dt, theta, steps)
