"""Shared fixtures"""
import numpy as np
import pytest

from app.models.tensor import Precision, Tensor
from app.services.fourier_ops import random_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_tensor(rng):
    def make(*shape, precision=Precision.DOUBLE):
        return Tensor(rng.standard_normal(shape), precision)

    return make


@pytest.fixture
def block_params(rng):
    def make(channels=4, rho=2, **flags):
        return random_params(channels, rho, rng, Precision.DOUBLE, **flags)

    return make
