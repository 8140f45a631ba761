import numpy as np
import pytest

from difftween import Latent, make_schedule
from difftween.backends import ToyBackend


@pytest.fixture
def schedule():
    return make_schedule(1000)


@pytest.fixture
def small_schedule():
    return make_schedule(8)


@pytest.fixture
def toy(schedule):
    return ToyBackend(schedule, image_size=(4, 4), tau=0.0)


@pytest.fixture
def toy_gaussian(schedule):
    return ToyBackend(schedule, image_size=(4, 4), tau=1.0)


def random_latent(seed: int, shape=(3, 4, 4)) -> Latent:
    return Latent(np.random.default_rng(seed).standard_normal(shape))


def random_image(seed: int, size=(4, 4)) -> np.ndarray:
    return np.random.default_rng(seed).random((*size, 3))
