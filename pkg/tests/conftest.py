import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pksfil.grid import Grid2D
from pksfil.operators import make_context
from pksfil.profile import solve_profile

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FOUR_PI = 4 * math.pi


@pytest.fixture(scope="session")
def profile_4pi():
    return solve_profile(FOUR_PI)


@pytest.fixture(scope="session")
def ctx_small(profile_4pi):
    """4 pi profile on a coarse but resolved grid."""
    return make_context(profile_4pi, Grid2D(12.0, 96))


@pytest.fixture(scope="session")
def ctx_wide(profile_4pi):
    """Large domain for identities that are only exact away from the boundary."""
    return make_context(profile_4pi, Grid2D(12.0, 128))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_field(grid, rng, n=1, width=(0.5, 1.5), complex_=False):
    """Random sums of Gaussians, decaying well inside the domain."""
    X, Y = grid.mesh
    out = np.zeros((n, grid.N, grid.N), dtype=complex if complex_ else float)
    for i in range(n):
        for _ in range(3):
            w = rng.uniform(*width)
            cx, cy = rng.uniform(-1.5, 1.5, size=2)
            amp = rng.normal() + (1j * rng.normal() if complex_ else 0.0)
            out[i] += amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))
    return out if n > 1 else out[0]
