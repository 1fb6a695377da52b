"""
Core numerical modules for the metasurface engine.
"""

from .engine import MetasurfaceEngine
from .lattice import Lattice2D, make_lattice
from .mesh import SurfaceMesh
from .scattering import ScatteringPipeline
from .tracing import TracingManager

__all__ = [
    "MetasurfaceEngine",
    "Lattice2D",
    "make_lattice",
    "SurfaceMesh",
    "ScatteringPipeline",
    "TracingManager",
]
