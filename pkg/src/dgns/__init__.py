"""Discontinuous Galerkin incompressible Navier-Stokes solver with projection schemes."""

from .forms import Discretization, FluidParams, PenaltyConfig
from .mesh import StructuredMesh, build_mesh
from .projection import ProjectionConfig, Projector

__all__ = [
    "Discretization",
    "FluidParams",
    "PenaltyConfig",
    "ProjectionConfig",
    "Projector",
    "StructuredMesh",
    "build_mesh",
]

__version__ = "0.1.0"
