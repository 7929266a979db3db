#!/usr/bin/env python3
"""
pcabp

Simulation and verification workbench for attractive probabilistic cellular
automata and bootstrap percolation:
- up-family algebra, rates measures and stochastic domination
- PCA and BP engines driven by reproducible counter-based fields
- the exact CA <-> BP correspondence and its trajectory check
- direction geometry (stable/unstable directions, eroders)
- pivotal sums, revealments and the variance inequality, with exhaustive oracles
- sweeps, decay fits and critical-parameter brackets

License: MIT
"""

from .cli import main
from .errors import (
    CapacityError,
    DegenerateFitError,
    DomainError,
    MarginError,
    ModelFileError,
    MonotonicityError,
    NotHalfSpaceError,
    UnknownClassificationError,
    WorkbenchError,
)

__version__ = "1.0.0"

__all__ = [
    "main",
    "CapacityError",
    "DegenerateFitError",
    "DomainError",
    "MarginError",
    "ModelFileError",
    "MonotonicityError",
    "NotHalfSpaceError",
    "UnknownClassificationError",
    "WorkbenchError",
]


if __name__ == "__main__":
    main()
