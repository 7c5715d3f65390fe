import numpy as np
import pytest

from lotvar import solve_w2, uniform_measure


@pytest.fixture(scope="session", autouse=True)
def warm_solver():
    """Trigger numba JIT once so timed tests measure the algorithm, not the
    compiler."""
    nu = uniform_measure(np.array([[0.0], [1.0]]))
    mu = uniform_measure(np.array([[0.5], [1.5]]))
    solve_w2(nu, mu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_measure(rng, n, d, integer=False):
    w = rng.random(n) + 0.1
    w /= w.sum()
    pts = rng.integers(-3, 4, (n, d)).astype(float) if integer else rng.normal(size=(n, d))
    from lotvar import validate_measure

    return validate_measure(w, pts)
