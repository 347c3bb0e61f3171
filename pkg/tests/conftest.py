import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dotlab.divergence import make_entropic, make_power  # noqa: E402
from dotlab.measure import DiscreteMeasure, build_cost  # noqa: E402


@pytest.fixture
def instance_a():
    mu = DiscreteMeasure([0.0, 1.0], [0.5, 0.5])
    nu = DiscreteMeasure([0.0, 1.0], [0.5, 0.5])
    return mu, nu, build_cost(mu, nu, "euclidean")


@pytest.fixture
def instance_b():
    mu = DiscreteMeasure([0.0, 1.0], [0.3, 0.7])
    nu = DiscreteMeasure([0.0, 0.5, 1.0], [1 / 3, 1 / 3, 1 / 3])
    return mu, nu, build_cost(mu, nu, "euclidean")


@pytest.fixture
def single_atoms():
    mu = DiscreteMeasure([[0.2]], [1.0])
    nu = DiscreteMeasure([[0.9]], [1.0])
    return mu, nu, build_cost(mu, nu, "euclidean")


@pytest.fixture
def entropic():
    return make_entropic()


@pytest.fixture
def quadratic():
    return make_power(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
