import numpy as np
import pytest

from memfem.elements import FunctionSpacePair
from memfem.mesh import build_structured


@pytest.fixture(scope="session")
def spaces():
    cache = {}

    def get(M, order):
        if (M, order) not in cache:
            cache[M, order] = FunctionSpacePair(build_structured(M), order)
        return cache[M, order]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
