"""Reduced-order model core.

The controlled population is summarized by its mean and scaled standard
deviation.  Phase-space states are plain float arrays in the order

    ``(q1, p1, q2, p2)``  --  mean, mean momentum, scaled deviation, deviation momentum,

and their Lagrangian twins in the order ``(X, S, P, Lambda)``.  All
functions broadcast over leading axes, so an ``(n, 4)`` array of states is
handled in one call.

Sign conventions: the Hamiltonian is ``H = -E`` with
``E = p1^2/(2 mu) + p2^2/(2 eps^2 mu) + V(q1, q2)``, which makes the flow
satisfy ``dq/dt = dH/dp`` and ``dp/dt = +dV/dq``.  Energies reported
anywhere in this package are ``E``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

PHASE_LABELS = ("q1", "p1", "q2", "p2")
LAGRANGIAN_LABELS = ("X", "S", "P", "Lambda")


@dataclass(frozen=True)
class ModelParams:
    """The six scalars defining the game.

    sigma:   noise intensity (> 0)
    mu:      control penalization weight (> 0)
    g:       interaction strength (> 0)
    h:       quadratic external-potential coefficient (>= 0)
    alpha:   interaction exponent (> 0)
    epsilon: standard-deviation scale, in (0, 1)
    """

    sigma: float
    mu: float
    g: float
    h: float
    alpha: float
    epsilon: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not (self.mu > 0):
            raise DomainError(f"mu must be positive, got {self.mu}")
        if not (self.g > 0):
            raise DomainError(f"g must be positive, got {self.g}")
        if not (self.alpha > 0):
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not (0 < self.epsilon < 1):
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        # h < 0 would move the mean equilibrium off q1 = 0.
        if not (self.h >= 0):
            raise DomainError(f"h must be nonnegative, got {self.h}")

    @property
    def interaction_coeff(self) -> float:
        """Coefficient of the (eps*q2)^(-alpha) interaction energy term."""
        a = self.alpha
        return self.g / ((a + 1.0) ** 1.5 * (2.0 * math.pi) ** (a / 2.0))


def _q2_guard(q2) -> None:
    if np.any(np.asarray(q2) <= 0.0):
        raise DomainError("q2 (scaled standard deviation) must be positive")


def potential_energy(params: ModelParams, q1, q2):
    """Potential V(q1, q2); scalar in, scalar out, broadcasts over arrays."""
    _q2_guard(q2)
    q1 = np.asarray(q1, dtype=float)
    s = params.epsilon * np.asarray(q2, dtype=float)
    h, mu, sig = params.h, params.mu, params.sigma
    v = (
        -h * q1**2 / 2.0
        - q1**4 / 4.0
        - 0.5 * s**2 * (h + 3.0 * q1**2)
        - mu * sig**4 / (8.0 * s**2)
        + params.interaction_coeff / s**params.alpha
        - 0.75 * s**4
    )
    return v if v.ndim else float(v)


def energy(params: ModelParams, state):
    """Total energy E = p1^2/(2 mu) + p2^2/(2 eps^2 mu) + V(q1, q2)."""
    state = np.asarray(state, dtype=float)
    q1, p1, q2, p2 = np.moveaxis(state, -1, 0)
    e = (
        p1**2 / (2.0 * params.mu)
        + p2**2 / (2.0 * params.epsilon**2 * params.mu)
        + potential_energy(params, q1, q2)
    )
    return e if np.ndim(e) else float(e)


def hamiltonian(params: ModelParams, state):
    """H = -E."""
    return -energy(params, state)


def vector_field(params: ModelParams, state):
    """Right-hand side of the Hamiltonian equations of motion.

    Returns (q1dot, p1dot, q2dot, p2dot) with the same shape as ``state``.
    """
    state = np.asarray(state, dtype=float)
    q1, p1, q2, p2 = np.moveaxis(state, -1, 0)
    _q2_guard(q2)
    eps, mu, h, sig = params.epsilon, params.mu, params.h, params.sigma
    s = eps * q2
    k = params.interaction_coeff
    a = params.alpha
    q1dot = -p1 / mu
    p1dot = -q1**3 - h * q1 - 3.0 * s**2 * q1
    q2dot = -p2 / (eps**2 * mu)
    p2dot = eps * (
        mu * sig**4 / (4.0 * s**3) - k * a / s ** (a + 1.0) - s * (3.0 * q1**2 + h) - 3.0 * s**3
    )
    return np.stack([q1dot, p1dot, q2dot, p2dot], axis=-1)


def state_jacobian(params: ModelParams, state):
    """Jacobian of ``vector_field`` with respect to the state.

    The momentum rows are constant; the momentum-derivative entries vanish
    because ``p1dot`` and ``p2dot`` depend only on (q1, q2).  Shape is
    ``state.shape[:-1] + (4, 4)``.
    """
    state = np.asarray(state, dtype=float)
    q1, _, q2, _ = np.moveaxis(state, -1, 0)
    _q2_guard(q2)
    eps, mu, h, sig = params.epsilon, params.mu, params.h, params.sigma
    s = eps * q2
    k = params.interaction_coeff
    a = params.alpha

    jac = np.zeros(state.shape[:-1] + (4, 4), dtype=float)
    jac[..., 0, 1] = -1.0 / mu
    jac[..., 1, 0] = -3.0 * q1**2 - h - 3.0 * s**2
    jac[..., 1, 2] = -6.0 * eps * s * q1
    jac[..., 2, 3] = -1.0 / (eps**2 * mu)
    jac[..., 3, 0] = -6.0 * eps * s * q1
    jac[..., 3, 2] = eps**2 * (
        -3.0 * mu * sig**4 / (4.0 * s**4)
        + k * a * (a + 1.0) / s ** (a + 2.0)
        - (3.0 * q1**2 + h)
        - 9.0 * s**2
    )
    return jac


def lagrangian_to_phase(lagr):
    """Map (X, S, P, Lambda) to (q1, p1, q2, p2) = (X, -P, S, -Lambda/(2S))."""
    lagr = np.asarray(lagr, dtype=float)
    X, S, P, Lam = np.moveaxis(lagr, -1, 0)
    if np.any(S <= 0.0):
        raise DomainError("S (scaled standard deviation) must be positive")
    return np.stack([X, -P, S, -Lam / (2.0 * S)], axis=-1)


def phase_to_lagrangian(state):
    """Inverse of :func:`lagrangian_to_phase`."""
    state = np.asarray(state, dtype=float)
    q1, p1, q2, p2 = np.moveaxis(state, -1, 0)
    _q2_guard(q2)
    return np.stack([q1, q2, -p1, -2.0 * q2 * p2], axis=-1)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy split into kinetic, interaction and external-potential terms."""

    e_kin: float
    e_ipot: float
    e_epot: float

    @property
    def e_tot(self) -> float:
        return self.e_kin + self.e_ipot + self.e_epot


def energy_components(params: ModelParams, lagr) -> EnergyBreakdown:
    """Kinetic / interaction / external potential terms in Lagrangian variables.

    The ``mu sigma^4`` diffusion term belongs to the kinetic part in this
    split (it migrates into V(q1, q2) in the Hamiltonian picture); the
    external potential is the fourth-order moment expansion of U_0 around
    the mean.
    """
    X, S, P, Lam = (float(v) for v in np.asarray(lagr, dtype=float))
    if S <= 0.0:
        raise DomainError("S must be positive")
    eps, mu, sig, h = params.epsilon, params.mu, params.sigma, params.h
    es = eps * S
    e_kin = P**2 / (2.0 * mu) + Lam**2 / (8.0 * mu * es**2) - mu * sig**4 / (8.0 * es**2)
    e_ipot = params.interaction_coeff / es**params.alpha
    e_epot = -h * X**2 / 2.0 - X**4 / 4.0 - 0.5 * es**2 * (h + 3.0 * X**2) - 0.75 * es**4
    return EnergyBreakdown(e_kin=e_kin, e_ipot=e_ipot, e_epot=e_epot)


def reduced_lagrangian(params: ModelParams, lagr) -> float:
    """Reduced Lagrangian, with velocities reconstructed from the momenta.

    Satisfies the Legendre identity
    ``H = -P*Xdot - Lambda*Sdot/(2S) - L`` against :func:`hamiltonian`
    evaluated at :func:`lagrangian_to_phase` of the same point.
    """
    X, S, P, Lam = (float(v) for v in np.asarray(lagr, dtype=float))
    if S <= 0.0:
        raise DomainError("S must be positive")
    eps, mu, sig, h = params.epsilon, params.mu, params.sigma, params.h
    es = eps * S
    xdot = P / mu
    sdot = Lam / (2.0 * mu * eps**2 * S)
    u0 = -h * X**2 / 2.0 - X**4 / 4.0
    u0_xx = -h - 3.0 * X**2
    u0_xxxx = -6.0
    return (
        -P * xdot
        - Lam * sdot / (2.0 * S)
        + u0
        + 0.5 * es**2 * u0_xx
        + (3.0 * es**4 / 24.0) * u0_xxxx
        + P**2 / (2.0 * mu)
        + (Lam**2 - sig**4 * mu**2) / (8.0 * mu * es**2)
        + params.interaction_coeff / es**params.alpha
    )
