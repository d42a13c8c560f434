"""Exterior-domain simulator for 2-D wave systems with cubic null-form nonlinearities."""

from nullwave.geometry import ExteriorGrid, ObstacleShape, build_grid, validate_shape
from nullwave.nullforms import CoefficientTensor, check_null, decompose_null, preset

__all__ = [
    "CoefficientTensor",
    "ExteriorGrid",
    "ObstacleShape",
    "build_grid",
    "check_null",
    "decompose_null",
    "preset",
    "validate_shape",
]

__version__ = "0.1.0"
