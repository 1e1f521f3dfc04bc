from functools import reduce

import numpy as np
import pytest


def dense_kron(factors):
    """Independent dense oracle for the Kronecker product."""
    return reduce(np.kron, [np.asarray(a, dtype=np.float64) for a in factors])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
