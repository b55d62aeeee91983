"""Exception types shared across the toolkit."""

from __future__ import annotations


class MfgTubesError(Exception):
    """Base class for all toolkit errors."""


class DomainError(MfgTubesError, ValueError):
    """Input outside the mathematical domain (e.g. nonpositive deviation)."""


class IntegrationError(MfgTubesError):
    """Time integration failed."""


class SingularityError(IntegrationError):
    """Trajectory hit the q2 -> 0 singularity of the potential."""

    def __init__(self, message: str, blow_up_time: float | None = None):
        super().__init__(message)
        self.blow_up_time = blow_up_time


class StiffnessError(IntegrationError):
    """Step size underflow during adaptive integration."""


class DegenerateEquilibriumError(MfgTubesError):
    """Jacobian block too close to singular to classify the equilibrium."""


class OrbitExistenceError(MfgTubesError):
    """No periodic orbit at the requested energy level."""


class HyperbolicityLostError(MfgTubesError):
    """Monodromy matrix has no real eigenvalue pair off the unit circle."""


class BvpConvergenceError(MfgTubesError):
    """Collocation Newton iteration failed to converge.

    Carries the last solver iterate (a scipy bvp result object) when one
    is available.
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InfeasibleGuessError(MfgTubesError, ValueError):
    """Initial guess for the boundary value problem leaves the domain."""


class NewtonError(MfgTubesError):
    """Newton iteration for an implicit step diverged.

    ``residual_history`` holds the max-abs residual after each iterate.
    """

    def __init__(self, message: str, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class SingularSystemError(MfgTubesError):
    """Banded linear system encountered a zero pivot."""


class GridDomainError(MfgTubesError, ValueError):
    """Density support does not fit inside the spatial grid."""


class DegenerateDensityError(MfgTubesError):
    """Extracted second moment is nonpositive."""
