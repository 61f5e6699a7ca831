import numpy as np
import pytest

from tipi.sml_core import ControllerParams, ForwardModel


def random_loop(rng, n, m, scale=0.7):
    """Controller and forward model with moderate random entries."""
    params = ControllerParams(rng.normal(0, scale, (m, n)), rng.normal(0, 0.3, m))
    model = ForwardModel(rng.normal(0, scale, (n, m)), rng.normal(0, 0.3, (n, n)),
                         rng.normal(0, 0.1, n), 0.05)
    return params, model


def random_spd(rng, n, jitter=0.5):
    A = rng.normal(size=(n, n))
    return A @ A.T + jitter * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
