import numpy as np
import pytest

from aqpcal import datagen
from aqpcal.geometry import PointSet


@pytest.fixture(scope="session")
def uniform_100k() -> PointSet:
    return datagen.generate(datagen.parse_spec("uniform"), 100_000, 1)


@pytest.fixture(scope="session")
def uniform_20k() -> PointSet:
    return datagen.generate(datagen.parse_spec("uniform"), 20_000, 2)


@pytest.fixture()
def rnd() -> np.random.Generator:
    return np.random.default_rng(1234)
