"""Sentinel-2 to AVIRIS-level hyperspectral reconstruction.

A classical quasi-Split-Bregman solver with a discriminator-based
regularizer and a Gram-matrix spectral prior, plus the simulation and
evaluation protocol around it.
"""

__version__ = "0.1.0"

from .cube import HsiCube, as_matrix, from_matrix, read_cube, write_cube
from .operators import SrfMatrix, build_gaussian_kernel
from .solver import SolverConfig, solve

__all__ = [
    "HsiCube",
    "SrfMatrix",
    "SolverConfig",
    "as_matrix",
    "build_gaussian_kernel",
    "from_matrix",
    "read_cube",
    "solve",
    "write_cube",
]
