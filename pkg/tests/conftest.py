import numpy as np
import pytest

from growthnas.genome import SkeletonSpec
from growthnas.space import OpSet, Widths


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def conv5():
    return OpSet.named("conv5")


@pytest.fixture
def skel3():
    return SkeletonSpec(3)


@pytest.fixture
def widths():
    return Widths()


def minimal_matrix(op: int = 1) -> np.ndarray:
    """Every hidden node reads from nodes 0 and 1."""
    m = np.zeros((7, 7), dtype=np.int64)
    m[2:6, 0] = op
    m[2:6, 1] = op
    return m
