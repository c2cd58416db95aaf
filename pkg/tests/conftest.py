import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from cegal.dtmc import Dtmc  # noqa: E402
from cegal.model import build_grid_world, default_grid_spec  # noqa: E402

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def dtmc_from_dense(P, labels=None, initial_state=0):
    return Dtmc(sp.csr_matrix(np.asarray(P, dtype=float)), labels or {}, initial_state)


@pytest.fixture
def chain():
    """s0 -> s0 (0.5), s0 -> u (0.5); u absorbing and labelled target."""
    return dtmc_from_dense([[0.5, 0.5], [0.0, 1.0]], {"target": {1}})


@pytest.fixture
def diamond():
    """s0 -> a (0.9) -> u (1.0); s0 -> u (0.1); u absorbing."""
    P = [[0.0, 0.9, 0.1], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]
    return dtmc_from_dense(P, {"target": {2}})


@pytest.fixture(scope="session")
def grid8():
    spec = default_grid_spec(8, 2)
    return spec, build_grid_world(spec)
