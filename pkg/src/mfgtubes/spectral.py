"""Equilibria, their linear data, and the bottleneck region analysis.

Both equilibrium classes share the hyperbolic (q1, p1) block; they differ in
the sign of the (p2dot, q2) Jacobian entry: a negative entry gives a second
hyperbolic pair (saddle x saddle), a positive one an elliptic pair
(saddle x center).  Eigenbasis coordinates are arrays ``(zeta, eta, rho1,
rho2)``: a hyperbolic pair followed by an elliptic (or second hyperbolic)
pair.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateEquilibriumError, DomainError
from .model import ModelParams, energy, state_jacobian, vector_field

EQUILIBRIUM_RESIDUAL_TOL = 1e-10


class EquilibriumKind(str, enum.Enum):
    SADDLE_SADDLE = "saddle-saddle"
    SADDLE_CENTER = "saddle-center"


class TransitClass(str, enum.Enum):
    TRANSIT = "transit"
    NON_TRANSIT = "non-transit"
    ASYMPTOTIC = "asymptotic"


@dataclass(frozen=True)
class Equilibrium:
    """Fixed point of the flow with its local linear data.

    ``abcd`` are the four positive block entries of the Jacobian; ``rates``
    is (gamma1, gamma2) for a saddle x saddle point and (lambda, nu) for a
    saddle x center point.
    """

    state: np.ndarray
    kind: EquilibriumKind
    abcd: tuple[float, float, float, float]
    rates: tuple[float, float]
    energy: float

    @property
    def q2(self) -> float:
        return float(self.state[2])


@dataclass(frozen=True)
class EigenBasis:
    """Eigenvector matrix of the linearization and the energy coefficients.

    The linear energy in basis coordinates is
    ``E_l = -a1 * zeta * eta + a2 * (rho1^2 + rho2^2)`` with
    ``a1 = 2ab/(a+b)`` and ``a2 = cd/(2(c+d))``.
    """

    T: np.ndarray
    T_inv: np.ndarray
    a1: float
    a2: float
    kind: EquilibriumKind


@dataclass(frozen=True)
class RegionSpec:
    """Bottleneck slab: fixed linear energy plus |zeta + eta| <= C."""

    eps1: float
    C: float
    rho_star: float

    def __post_init__(self):
        if not (self.eps1 > 0 and self.C > 0):
            raise DomainError("eps1 and C must be positive")


def classify_equilibrium(params: ModelParams, eq_state):
    """Extract (kind, abcd, rates) from the analytic Jacobian blocks.

    The equilibrium must satisfy the fixed-point condition to within
    ``EQUILIBRIUM_RESIDUAL_TOL``.
    """
    eq_state = np.asarray(eq_state, dtype=float)
    resid = float(np.max(np.abs(vector_field(params, eq_state))))
    if resid > EQUILIBRIUM_RESIDUAL_TOL:
        raise ValueError(f"state is not an equilibrium (|field| = {resid:.3g})")
    jac = state_jacobian(params, eq_state)
    a = -jac[0, 1]
    b = -jac[1, 0]
    c = -jac[2, 3]
    j43 = jac[3, 2]
    if abs(j43) < 1e-12:
        raise DegenerateEquilibriumError("Jacobian (4,3) entry vanishes; cannot classify")
    d = abs(j43)
    kind = EquilibriumKind.SADDLE_CENTER if j43 > 0 else EquilibriumKind.SADDLE_SADDLE
    rates = (math.sqrt(a * b), math.sqrt(c * d))
    return kind, (float(a), float(b), float(c), float(d)), rates


def find_equilibria(params: ModelParams, q2_range, n_scan: int = 4096) -> list[Equilibrium]:
    """All equilibria with q2 in ``q2_range`` (q1 = 0 for h >= 0).

    Roots of the p2 flow component along the q2 axis are bracketed on a
    fine scan and polished by bisection; each is classified and returned
    with its linear data.  An empty list (not an error) means no sign
    change in the range.
    """
    lo, hi = float(q2_range[0]), float(q2_range[1])
    if not (0 < lo < hi):
        raise DomainError("q2_range must satisfy 0 < lo < hi")

    def dv(q2):
        return float(vector_field(params, np.array([0.0, 0.0, q2, 0.0]))[3])

    grid = np.linspace(lo, hi, n_scan)
    vals = np.array([dv(q) for q in grid])
    out: list[Equilibrium] = []
    for i in range(n_scan - 1):
        va, vb = vals[i], vals[i + 1]
        if va == 0.0:
            root = grid[i]
        elif va * vb < 0.0:
            root = brentq(dv, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15)
        else:
            continue
        state = np.array([0.0, 0.0, float(root), 0.0])
        kind, abcd, rates = classify_equilibrium(params, state)
        out.append(
            Equilibrium(state=state, kind=kind, abcd=abcd, rates=rates, energy=float(energy(params, state)))
        )
    return out


def eigen_basis(eq: Equilibrium) -> EigenBasis:
    """Eigenvector matrix for the equilibrium's Jacobian block structure."""
    a, b, c, d = eq.abcd
    sa = math.sqrt(a / (a + b))
    sb = math.sqrt(b / (a + b))
    sc = math.sqrt(c / (c + d))
    sd = math.sqrt(d / (c + d))
    T = np.zeros((4, 4))
    T[0, 0], T[0, 1] = sa, sa
    T[1, 0], T[1, 1] = -sb, sb
    if eq.kind is EquilibriumKind.SADDLE_SADDLE:
        T[2, 2], T[2, 3] = sc, sc
        T[3, 2], T[3, 3] = -sd, sd
    else:
        T[2, 2] = sc
        T[3, 3] = -sd
    T_inv = np.linalg.inv(T)
    return EigenBasis(T=T, T_inv=T_inv, a1=2.0 * a * b / (a + b), a2=0.5 * c * d / (c + d), kind=eq.kind)


def to_eigen_coords(basis: EigenBasis, eq: Equilibrium, state):
    """Map phase states to eigenbasis coordinates; broadcasts over rows."""
    z = np.asarray(state, dtype=float) - eq.state
    return z @ basis.T_inv.T


def from_eigen_coords(basis: EigenBasis, eq: Equilibrium, coords):
    """Inverse of :func:`to_eigen_coords`."""
    y = np.asarray(coords, dtype=float)
    return y @ basis.T.T + eq.state


def linear_energy(basis: EigenBasis, coords):
    """Energy invariant of the linearized flow in eigenbasis coordinates."""
    y = np.asarray(coords, dtype=float)
    zeta, eta, rho1, rho2 = np.moveaxis(y, -1, 0)
    e = -basis.a1 * zeta * eta + basis.a2 * (rho1**2 + rho2**2)
    return e if np.ndim(e) else float(e)


def linear_flow(rates, coords0, t):
    """Closed-form linearized flow around a saddle x center point.

    The hyperbolic pair evolves as ``zeta e^{lam t}, eta e^{-lam t}``; the
    elliptic pair rotates by the angle ``nu t``.
    """
    lam, nu = rates
    zeta, eta, rho1, rho2 = (float(v) for v in np.asarray(coords0, dtype=float))
    cs, sn = math.cos(nu * t), math.sin(nu * t)
    return np.array(
        [
            zeta * math.exp(lam * t),
            eta * math.exp(-lam * t),
            rho1 * cs - rho2 * sn,
            rho1 * sn + rho2 * cs,
        ]
    )


def transit_classify(coords, tol: float | None = None) -> TransitClass:
    """Classify a point by the sign of zeta*eta with a dead band.

    Negative products transit between the bounding spheres, positive ones
    bounce back, and products inside the dead band lie on the asymptotic
    cylinders.
    """
    y = np.asarray(coords, dtype=float)
    prod = float(y[0] * y[1])
    if tol is None:
        tol = 1e-10 * max(1.0, y[0] ** 2 + y[1] ** 2)
    if abs(prod) <= tol:
        return TransitClass.ASYMPTOTIC
    return TransitClass.TRANSIT if prod < 0 else TransitClass.NON_TRANSIT


def region_spec(basis: EigenBasis, eps1: float, C: float | None = None) -> RegionSpec:
    """Slab specification at excess linear energy ``eps1``.

    The default half-width ``C = sqrt(4 eps1 / a1)`` lets the bounding
    spheres reach radii up to sqrt(2) times the asymptotic cylinder radius
    ``rho* = sqrt(eps1 / a2)``.
    """
    if eps1 <= 0:
        raise DomainError("eps1 must be positive")
    if C is None:
        C = math.sqrt(4.0 * eps1 / basis.a1)
    return RegionSpec(eps1=float(eps1), C=float(C), rho_star=math.sqrt(eps1 / basis.a2))


def sphere_point(
    basis: EigenBasis,
    region: RegionSpec,
    rho: float,
    theta: float,
    face: int = -1,
    entering: bool = True,
):
    """Point on a bounding sphere of the slab, in eigenbasis coordinates.

    ``face`` selects the sphere at ``zeta + eta = face * C``; ``entering``
    picks the hemisphere whose hyperbolic drift moves into the slab.
    ``rho`` is the elliptic radius and ``theta`` the elliptic phase.
    """
    if face not in (-1, 1):
        raise ValueError("face must be +1 or -1")
    s = face * region.C
    prod = (basis.a2 * rho**2 - region.eps1) / basis.a1
    disc = s * s - 4.0 * prod
    if disc < 0:
        raise DomainError(f"rho = {rho:g} exceeds the bounding-sphere radius")
    u = math.sqrt(disc)
    if (face == -1) != entering:
        u = -u  # leaving hemisphere: flip the sign of zeta - eta
    zeta = 0.5 * (s + u)
    eta = 0.5 * (s - u)
    return np.array([zeta, eta, rho * math.cos(theta), rho * math.sin(theta)])
