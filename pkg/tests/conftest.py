import numpy as np
import pytest

from nrnsaf.filterbank import design_cmfb
from nrnsaf.moments import MomentCache


@pytest.fixture(scope="session")
def moment_cache(tmp_path_factory):
    return MomentCache(tmp_path_factory.mktemp("moments"))


@pytest.fixture(scope="session")
def bank8():
    return design_cmfb(8, 64)


@pytest.fixture(scope="session")
def bank4():
    return design_cmfb(4, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
