import numpy as np
import pytest

from metarhc.linsys import SystemParams, ThetaSet, sample_theta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stable_system(rng, n, m, rho=0.8):
    """A random controllable system with spectral radius scaled to rho."""
    for _ in range(100):
        A = rng.normal(size=(n, n))
        r = float(np.max(np.abs(np.linalg.eigvals(A))))
        if r > 0:
            A *= rho / r
        B = rng.normal(size=(n, m))
        sys = SystemParams(A=A, B=B)
        if sys.is_controllable():
            return sys
    raise RuntimeError("could not sample a controllable system")


@pytest.fixture
def scalar_theta_set():
    return ThetaSet(n=1, m=1, S=2.0, rho_max=0.95,
                    anchor=SystemParams(A=[[0.6]], B=[[1.2]]), task_radius=0.1)
