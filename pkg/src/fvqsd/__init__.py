"""Fleming-Viot particle approximation of quasi-stationary distributions.

Simulation of metastable overdamped Langevin dynamics killed at a domain
boundary, the interacting N-particle system with uniform-survivor rebirth, a
paired-system coupling harness, and an independent spectral oracle that makes
the convergence claims checkable at desk scale.
"""

__version__ = "0.1.0"

from .backends import BACKEND
from .domain import DomainSpec
from .potential import (CriticalHeightReport, PotentialSpec, ValidationReport,
                        builtin_potential, critical_height, free_potential,
                        validate_assumption1)

__all__ = [
    "BACKEND",
    "DomainSpec",
    "PotentialSpec",
    "ValidationReport",
    "CriticalHeightReport",
    "builtin_potential",
    "critical_height",
    "free_potential",
    "validate_assumption1",
    "__version__",
]
