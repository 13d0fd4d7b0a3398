import numpy as np
import pytest

from contjump.geometry import TorusGeometry
from contjump.kernels import FACTORIZED, MOMENTUM, KernelSpec, RadialProfile
from contjump.observables import TestProfile


@pytest.fixture(scope="session")
def geom():
    return TorusGeometry(1, 20.0)


@pytest.fixture(scope="session")
def ball_a():
    return RadialProfile("uniform-ball", 1.0, 0.5)


@pytest.fixture(scope="session")
def bump_b():
    return RadialProfile("smooth-bump", 1.0, 1.0)


@pytest.fixture(scope="session")
def spec(ball_a, bump_b):
    return KernelSpec(FACTORIZED, ball_a, bump_b, d=1)


@pytest.fixture(scope="session")
def spec_momentum(ball_a, bump_b):
    return KernelSpec(MOMENTUM, ball_a, bump_b, d=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def phi():
    return TestProfile((10.0,), 2.0, 0.7)
