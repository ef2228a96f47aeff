import numpy as np
import pytest

from capsbeam.capsnet import init_weights, toy_config
from capsbeam.data_model import PixelGrid, ProbeGeometry, RfVolume


@pytest.fixture(scope="session")
def toy_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def toy_grid():
    return PixelGrid(num_rows=16, num_cols=16)


@pytest.fixture(scope="session")
def toy_probe():
    return ProbeGeometry(num_elements=8)


@pytest.fixture(scope="session")
def toy_weights(toy_cfg):
    return init_weights(toy_cfg, seed=42)


@pytest.fixture(scope="session")
def toy_rf(toy_grid):
    rng = np.random.default_rng(7)
    samples = rng.normal(scale=0.25, size=(16, 16, 8)).astype(np.float32)
    return RfVolume(grid=toy_grid, num_channels=8, samples=samples)
