import numpy as np
import pytest

from magmap.data import TrainingSet
from magmap.grid import build_grid
from magmap.kernels import Hyperparameters


@pytest.fixture
def hyp():
    return Hyperparameters(2.0, 1.0, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_problem(hyp):
    """N = 20 measurements inside the interior of a 6x6x4 grid."""
    rng = np.random.default_rng(7)
    grid = build_grid([[-2.0, 2.0], [-2.0, 2.0], [-0.5, 0.5]], (6, 6, 4), padding=(1, 1, 1))
    P = rng.uniform([-2, -2, -0.5], [2, 2, 0.5], size=(20, 3))
    Y = rng.normal(scale=0.5, size=(20, 3))
    return TrainingSet(P, Y), grid
