import numpy as np

from dhmlab.grid import make_grid
from dhmlab.solver import random_smooth_field
from dhmlab.sphere import project_sphere, project_tangent


def smooth_pair(topology="torus", n=32, seed=0, amp=0.6, L=1.0):
    grid = make_grid(topology, L, L, n, n)
    rng = np.random.default_rng(seed)
    pole = np.array([0.0, 0.0, 1.0])
    phi = project_sphere(grid, pole + amp * random_smooth_field(grid, (3,), rng, kmax=3))
    psi = project_tangent(phi, random_smooth_field(grid, (3, 2), rng, kmax=3,
                                                   complex_valued=True))
    return grid, phi, psi


def constant_map(grid, k=3):
    from dhmlab.sphere import MapField
    v = np.zeros(grid.shape + (k,))
    v[..., -1] = 1.0
    return MapField(grid, v)
