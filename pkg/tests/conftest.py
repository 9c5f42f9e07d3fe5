import numpy as np
import pytest

from casesens.study import Study


def make_study(m, J, y, narrow=None):
    m = np.atleast_1d(m)
    J = np.broadcast_to(np.atleast_1d(J), m.shape)
    y = np.broadcast_to(np.atleast_1d(y), m.shape)
    narrow = np.zeros_like(m) if narrow is None else np.broadcast_to(np.atleast_1d(narrow), m.shape)
    return Study(np.arange(1, m.size + 1), J, m, y, narrow)


def random_study(rng, n_sets, J_max=6, p_exp=0.5, p_case=0.75, p_narrow=0.6):
    """Random valid study with varying set sizes."""
    J = rng.integers(2, J_max + 1, n_sets)
    y = (rng.random(n_sets) < p_case).astype(int)
    m = y + rng.binomial(J - 1, p_exp)
    narrow = (rng.random(n_sets) < p_narrow).astype(int)
    narrow[0] = 1
    return Study(np.arange(1, n_sets + 1), J, m, y, narrow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
