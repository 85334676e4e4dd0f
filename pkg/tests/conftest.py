import numpy as np
import pytest

from arvox.unet import UNetConfig
from arvox.volume import Volume
from arvox.weights import init_weights

from ._acceptance_log import LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    """Smallest config that still exercises every architectural path."""
    return UNetConfig(stages=2, base_channels=4, patch_edge=8, bam_p=2, bam_m=6)


@pytest.fixture(scope="session")
def tiny_weights(tiny_cfg):
    return init_weights(tiny_cfg, seed=7)


@pytest.fixture(scope="session")
def small_cfg():
    return UNetConfig(stages=3, base_channels=8, patch_edge=16, bam_p=4, bam_m=12)


@pytest.fixture(scope="session")
def small_weights(small_cfg):
    return init_weights(small_cfg, seed=11)


def make_volume(rng, shape, channels=1):
    data = rng.standard_normal((channels, *shape)).astype(np.float32)
    return Volume(data)


@pytest.fixture
def vol_factory(rng):
    def factory(shape, channels=1):
        return make_volume(rng, shape, channels)

    return factory
