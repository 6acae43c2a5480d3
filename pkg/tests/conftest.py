import numpy as np
import pytest

from oscchain import Closure, StateVector


def random_state(rng, n: int, closure: Closure = Closure.DIRICHLET,
                 scale: float = 1.0) -> StateVector:
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return StateVector(scale * z, closure)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
