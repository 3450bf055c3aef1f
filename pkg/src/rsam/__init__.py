"""Sharpness-aware minimization on Stiefel manifolds.

Manifold primitives (tangent projection, QR retraction), four optimizer
strategies (SGD, RSGD, SAM, RSAM with exact and approximate perturbation
solvers), desk-scale analytic models, sharpness and Hessian-spectrum
diagnostics, and a reproducible experiment runner.
"""

from rsam.errors import (
    BatchCompositionError,
    CapacityError,
    ConfigError,
    DegenerateGradientError,
    NumericError,
    RankError,
    ShapeError,
)

__all__ = [
    "BatchCompositionError",
    "CapacityError",
    "ConfigError",
    "DegenerateGradientError",
    "NumericError",
    "RankError",
    "ShapeError",
]

__version__ = "0.1.0"
