"""Constrained zero-range lattice gas laboratory.

Simulation, equilibrium-measure machinery, exact ergodicity analysis and
the degenerate diffusion equation the particle density scales to.
"""

from .lattice import Configuration, TorusGeometry, apply_jump, block_average, shift_site
from .measures import DensityProfile, EquilibriumFamily
from .rates import GFunction, Kernel, bond_rate

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "TorusGeometry",
    "apply_jump",
    "block_average",
    "shift_site",
    "DensityProfile",
    "EquilibriumFamily",
    "GFunction",
    "Kernel",
    "bond_rate",
    "__version__",
]
