import numpy as np
import pytest

from vesselforge.phantoms import make_phantom, multi_segment_phantom


@pytest.fixture(scope="session")
def straight():
    return make_phantom("straight")


@pytest.fixture(scope="session")
def l_shaped():
    return make_phantom("l_shaped")


@pytest.fixture(scope="session")
def helix():
    return make_phantom("helix")


@pytest.fixture(scope="session")
def cow_phantom():
    """13-segment multi-class phantom plus its analytic centerlines."""
    return multi_segment_phantom()


def random_mask(rng: np.random.Generator, shape=(8, 8, 8), p=0.4):
    return rng.random(shape) < p


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
