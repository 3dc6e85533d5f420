"""Mean-field vortex branches, entropy envelopes and phase transitions on planar domains.

Submodules are imported on demand so that the command line can cap BLAS
threads before numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "disk",
    "branches",
    "transitions",
    "deformed",
    "high_energy",
    "oracle",
    "pde",
    "config",
    "io",
    "cli",
]
