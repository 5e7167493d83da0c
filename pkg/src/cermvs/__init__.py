"""Multiview stereo: cascaded epipolar cost volumes + recurrent refinement."""

__version__ = "0.1.0"

from .errors import (
    CermvsError,
    InvalidDisparityError,
    InvalidInputError,
    NumericalFailureError,
)

__all__ = [
    "CermvsError",
    "InvalidDisparityError",
    "InvalidInputError",
    "NumericalFailureError",
    "__version__",
]
