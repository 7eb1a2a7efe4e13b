import numpy as np
import pytest

from stridelab.skeleton import default_skeleton


@pytest.fixture(scope="session")
def skel():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
