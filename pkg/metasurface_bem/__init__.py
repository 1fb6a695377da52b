"""
Metasurface BEM

Boundary-integral engine for a periodic layer of plasmonic nanoparticles above a perfectly
conducting plane: quasi-periodic Green's functions, Neumann-Poincare spectra, polarization
tensors and the effective reflection of the layer.
"""

__version__ = "1.0.0"
__description__ = "Periodic plasmonic metasurface boundary element engine"

from .core.engine import MetasurfaceEngine
from .utils.config import ConfigManager, ScenarioConfig

__all__ = [
    "MetasurfaceEngine",
    "ConfigManager",
    "ScenarioConfig",
]
