import numpy as np
import pytest

import krlx
from krlx.fields import DistributionField


@pytest.fixture(scope="session")
def grid1d():
    return krlx.PhaseGrid(1, 64, 64, 8.0, 8.0)


@pytest.fixture(scope="session")
def std_maxwellian(grid1d):
    """Unit-mass Maxwellian of V = x^2/2 on the shared d=1 grid."""
    M, _ = krlx.maxwellian(0.5 * grid1d.x**2, grid1d)
    return M


@pytest.fixture(scope="session")
def ops1d(std_maxwellian):
    return krlx.WeightedOperatorSet(std_maxwellian)


def random_field(grid, rng, M=None, smooth=False):
    """Seeded random field; smooth=True modulates the Maxwellian envelope."""
    if smooth:
        xs = grid.x_meshes()
        vs = grid.v_meshes()
        w = 1.0
        for k in range(3):
            ax = rng.uniform(0.3, 1.5)
            bx = rng.uniform(0, 2 * np.pi)
            w = w + rng.normal() * np.cos(ax * sum(xs) + bx) \
                * np.cos(rng.uniform(0.3, 1.5) * sum(vs))
        env = np.exp(-(sum(a**2 for a in xs) + sum(a**2 for a in vs)) / 2.0)
        vals = np.broadcast_to(w * env, grid.shape).astype(float)
    else:
        base = np.exp(-(grid.v_radius_sq()) / 2.0)
        xs = grid.x_meshes()
        env = np.exp(-sum(a**2 for a in xs) / 2.0)
        vals = rng.standard_normal(grid.shape) * env * base
    return DistributionField(grid, vals)
