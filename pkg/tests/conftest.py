import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TAN80 = math.tan(math.radians(80.0))


@pytest.fixture(scope="session")
def tan80():
    return TAN80


@pytest.fixture(scope="session")
def nominal_result():
    from lqrpi.plant import FilterParams, TWO_PI, plant_matrices
    from lqrpi.synthesis import LqrWeights, augment, lqr_pi_gains

    return lqr_pi_gains(augment(plant_matrices(FilterParams(), TWO_PI * 50.0)), LqrWeights.nominal())


def random_stabilizable(rng, n=None, m=None):
    """Random (a, b, q, r) with (a, b) controllable almost surely."""
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, n + 1))
    a = rng.normal(size=(n, n))
    b = rng.normal(size=(n, m))
    h = rng.normal(size=(n, n))
    q = h @ h.T + 1e-3 * np.eye(n)
    g = rng.normal(size=(m, m))
    r = g @ g.T + 0.1 * np.eye(m)
    return a, b, q, r
