import numpy as np
import pytest

from uwsod.config import RunConfig
from uwsod.tensor import clear_tape, use_dtype


@pytest.fixture(autouse=True)
def _clean_tape():
    # leftover nodes from a failed test must not leak into the next one
    clear_tape()
    yield
    clear_tape()


@pytest.fixture
def f64():
    with use_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_cfg():
    """Smallest config the architecture accepts; fast enough for every test."""
    return RunConfig(image_size=32, encoder_channels=(8, 8, 16, 16),
                     base_channels=16, rc_kernels=(3, 5), weight_pool=5,
                     batch_size=2, steps=2).validate()
