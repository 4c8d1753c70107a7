"""Numerical laboratory for Dirac-harmonic maps from flat surfaces into spheres."""

__version__ = "0.1.0"

from dhmlab.grid import Grid, make_grid
from dhmlab.sphere import MapField, SpinorAlongMap, energies

__all__ = ["Grid", "make_grid", "MapField", "SpinorAlongMap", "energies", "__version__"]
