import numpy as np
import pytest

from mgtlab import MGTParams, build_fracop, standard_grid


@pytest.fixture(scope="session")
def grid31():
    return standard_grid(N=31)


@pytest.fixture(scope="session")
def op31(grid31):
    return build_fracop(grid31, 1.3)


@pytest.fixture(scope="session")
def grid47():
    return standard_grid(N=47)


@pytest.fixture(scope="session")
def op47(grid47):
    return build_fracop(grid47, 1.3)


@pytest.fixture(scope="session")
def params():
    return MGTParams(alpha=0.8, b=1.0, c=0.7)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
