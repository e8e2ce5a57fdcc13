import numpy as np
import pytest

from sstep_krylov.problem_gen import ProblemSpec, discretize


def random_operator(n: int, seed: int = 0, shift: float = 3.0) -> np.ndarray:
    """shift*I plus a scaled Gaussian matrix: eigenvalues in a unit disc around shift."""
    rng = np.random.default_rng(seed)
    return shift * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)


def assert_histories_match(a, b, r0, rtol=1e-8):
    assert len(a) == len(b)
    np.testing.assert_allclose(a, b, rtol=rtol, atol=1e-12 * r0)


@pytest.fixture(scope='session')
def problem3():
    return discretize(ProblemSpec(nx=3))


@pytest.fixture(scope='session')
def problem7():
    return discretize(ProblemSpec(nx=7))


@pytest.fixture(scope='session')
def symmetric7():
    return discretize(ProblemSpec(nx=7, beta=0.0, gamma=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
