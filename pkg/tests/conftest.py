import numpy as np
import pytest

from plitex.signal import ParameterMaps


def random_maps(rng, shape=(16, 16), it_range=(0.05, 1.0), incident=1.0):
    return ParameterMaps(
        rng.uniform(*it_range, shape) * incident,
        rng.uniform(0.0, 180.0, shape),
        rng.uniform(0.0, 1.0, shape),
        incident=incident,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
