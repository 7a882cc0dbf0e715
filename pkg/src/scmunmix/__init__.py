"""Spatial compositional model for hyperspectral unmixing with endmember uncertainty."""

from scmunmix.core import (
    AbundanceMatrix,
    EndmemberSet,
    HsiCube,
    PrecisionSet,
    ScmConfig,
    ScmError,
    ScmResult,
    ShapeError,
    new_hsi_cube,
)
from scmunmix.solver import unmix

__all__ = [
    "AbundanceMatrix",
    "EndmemberSet",
    "HsiCube",
    "PrecisionSet",
    "ScmConfig",
    "ScmError",
    "ScmResult",
    "ShapeError",
    "new_hsi_cube",
    "unmix",
]

__version__ = "0.1.0"
