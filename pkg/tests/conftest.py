import numpy as np
import pytest

from elgar.cello import default_cello
from elgar.skeleton import default_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture(scope="session")
def cello():
    return default_cello()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
