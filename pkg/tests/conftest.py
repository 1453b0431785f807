import math

import numpy as np
import pytest

from hetradar.pipeline import Describer
from hetradar.scan_model import PolarGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid():
    return PolarGrid(384, 192, 150.0, 2 * math.pi / 3)


@pytest.fixture(scope="session")
def describer():
    return Describer.random(0)
