import numpy as np
import pytest

from src.family.model_family import family_moments
from src.family.presets import synthetic_cost, synthetic_family, toy_cost, toy_family


@pytest.fixture
def toy():
    return toy_family()


@pytest.fixture
def toy_moments(toy):
    return family_moments(toy)


@pytest.fixture
def cost():
    return toy_cost()


@pytest.fixture
def synthetic():
    return synthetic_family()


@pytest.fixture
def synthetic_pricing():
    return synthetic_cost()


@pytest.fixture
def unit_L():
    alpha = np.zeros(4)
    alpha[3] = 1.0
    return alpha


@pytest.fixture
def random_spd():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((3, 5))
    return A @ A.T
