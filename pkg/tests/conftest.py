import numpy as np
import pytest

from mh_ldp.verify import two_state_kernel


@pytest.fixture
def two_state():
    return two_state_kernel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
