"""Dirichlet spectra of corner and cross layers, and Brownian exit-time tails."""

from .geometry import DomainSpec, Kind, PartitionCell, Variant
from .discretization import Grid, Reduction, SparseOperator, assemble_dirichlet_laplacian, build_grid

__all__ = [
    "DomainSpec",
    "Kind",
    "PartitionCell",
    "Variant",
    "Grid",
    "Reduction",
    "SparseOperator",
    "assemble_dirichlet_laplacian",
    "build_grid",
]
