"""Simulation, mitigation and analysis tools for Trotterized transverse-field Ising quenches."""

from .lattice import Lattice, SitePermutation
from .pauli import PauliString

__version__ = "0.1.0"

__all__ = ["Lattice", "SitePermutation", "PauliString", "__version__"]
