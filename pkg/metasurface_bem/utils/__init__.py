"""
Utility modules for the metasurface engine.
"""

from .config import ConfigManager
from .error_handling import ErrorHandler, MetasurfaceError

__all__ = [
    "ConfigManager",
    "ErrorHandler",
    "MetasurfaceError",
]
