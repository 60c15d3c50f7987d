"""Finite-difference Beris-Edwards Q-tensor flow on a 2D MAC grid."""

from .energy_ledger import EnergyLedger, dissipation_audit, free_energy, kinetic_energy
from .grid_ops import GridSpec, QField, VelocityField
from .initial_data import standard_bubble, uniaxial_bubble
from .poisson_helmholtz import SolverConfig, helmholtz_project
from .scheme import SchemeConfig, State, advance, picard_step
from .tensor_core import MaterialParams, ViscositySpec

__version__ = "0.1.0"

__all__ = [
    "EnergyLedger",
    "dissipation_audit",
    "free_energy",
    "kinetic_energy",
    "GridSpec",
    "QField",
    "VelocityField",
    "standard_bubble",
    "uniaxial_bubble",
    "SolverConfig",
    "helmholtz_project",
    "SchemeConfig",
    "State",
    "advance",
    "picard_step",
    "MaterialParams",
    "ViscositySpec",
]
