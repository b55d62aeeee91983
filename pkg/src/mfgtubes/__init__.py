"""Phase-space toolkit for a reduced-order mean-field game model.

Solves the 4D Hamiltonian two-point boundary value problem obtained by
restricting a quadratic mean-field game to the first two moments of the
agent density, maps its bifurcation structure through the tube dynamics of
the bottleneck periodic orbit, and cross-validates the branch topology
against a finite-difference solver of the full planning PDE system.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    EnergyBreakdown,
    ModelParams,
    energy,
    energy_components,
    hamiltonian,
    lagrangian_to_phase,
    phase_to_lagrangian,
    potential_energy,
    reduced_lagrangian,
    state_jacobian,
    vector_field,
)
