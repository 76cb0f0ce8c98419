import numpy as np
import pytest

from patchdepth.diffusion import build_schedule


@pytest.fixture(scope="session")
def default_schedule():
    return build_schedule()


@pytest.fixture(scope="session")
def fast_schedule():
    # full-length beta table, coarse sampling; keeps loop tests quick
    return build_schedule(T=1000, K=25)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
