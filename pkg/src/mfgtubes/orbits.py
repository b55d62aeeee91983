"""Bottleneck periodic orbits, their tube manifolds, and transit tests.

For h >= 0 the plane q1 = p1 = 0 is exactly invariant (p1dot is
proportional to q1), so the periodic orbits around a saddle x center
equilibrium live in that plane and reduce to a one-degree-of-freedom
oscillation in (q2, p2).  Orbit construction exploits this: the seed is the
inner turning point of V(0, .) at the requested energy, and the period is
the time of the second return to p2 = 0.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dynamics import SectionEvent, Trajectory, _integrate_raw, find_section_crossings, integrate_with_stm
from .errors import HyperbolicityLostError, OrbitExistenceError, StiffnessError
from .model import ModelParams, energy, potential_energy
from .spectral import EigenBasis, Equilibrium, EquilibriumKind


class TubeBranch(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


class TransitOutcome(str, enum.Enum):
    TRANSITED = "transited"
    BOUNCED = "bounced"
    UNDECIDED = "undecided"


@dataclass
class PeriodicOrbit:
    """Fixed-energy periodic orbit in the invariant plane with its monodromy."""

    energy: float
    seed: np.ndarray
    period: float
    samples: Trajectory
    monodromy: np.ndarray
    params: ModelParams

    def multipliers(self) -> np.ndarray:
        return np.linalg.eigvals(self.monodromy)

    def _hyperbolic_pair(self):
        vals, vecs = np.linalg.eig(self.monodromy)
        i_u = int(np.argmax(np.abs(vals)))
        lam_u = vals[i_u]
        if abs(lam_u.imag) > 1e-8 * abs(lam_u) or abs(lam_u) < 1.0 + 1e-6:
            raise HyperbolicityLostError(
                f"monodromy has no real eigenvalue pair off the unit circle (|lam| = {abs(lam_u):.8g})"
            )
        i_s = int(np.argmin(np.abs(vals)))
        out = []
        for i in (i_u, i_s):
            v = np.real(vecs[:, i])
            v = v / np.linalg.norm(v)
            if v[0] < 0:  # canonical sign: positive q1 component
                v = -v
            out.append(v)
        return float(lam_u.real), out[0], out[1]

    @property
    def unstable_multiplier(self) -> float:
        return self._hyperbolic_pair()[0]

    @property
    def unstable_direction(self) -> np.ndarray:
        return self._hyperbolic_pair()[1]

    @property
    def stable_direction(self) -> np.ndarray:
        return self._hyperbolic_pair()[2]

    @property
    def q2_amplitude(self) -> float:
        q2 = self.samples.states[:, 2]
        return float(np.max(q2) - np.min(q2))


@dataclass
class TubeManifold:
    """Globalized strands of a periodic orbit's stable or unstable tube."""

    branch: TubeBranch
    side: int
    displacement: float
    strands: list[Trajectory]
    energy: float
    launch_times: np.ndarray
    launch_states: np.ndarray
    truncated: list[bool]


def inner_turning_point(params: ModelParams, eq: Equilibrium, E: float) -> float:
    """q2 < q2_eq with V(0, q2) = E, the seed coordinate of the orbit."""

    def f(q2):
        return potential_energy(params, 0.0, q2) - E

    hi = eq.q2
    lo = hi
    for _ in range(200):
        lo *= 0.97
        if f(lo) > 0.0:
            return float(brentq(f, lo, hi, xtol=1e-15, rtol=1e-15))
        if lo < 1e-3 * eq.q2:
            break
    raise OrbitExistenceError(f"no inner turning point for E = {E:.8g}")


def orbit_at_energy(
    params: ModelParams,
    eq: Equilibrium,
    E: float,
    rtol: float = 1e-12,
    atol: float = 1e-12,
    t_max_cap: float = 200.0,
) -> PeriodicOrbit:
    """Periodic orbit of the family around a saddle x center point at energy E.

    Raises :class:`OrbitExistenceError` if E is at or below the equilibrium
    energy or above the family's existence bound, and
    :class:`HyperbolicityLostError` if the monodromy's real pair has
    collapsed onto the unit circle.
    """
    if eq.kind is not EquilibriumKind.SADDLE_CENTER:
        raise ValueError("periodic orbit family requires a saddle x center equilibrium")
    if not E > eq.energy:
        raise OrbitExistenceError(f"E = {E:.8g} is not above the equilibrium energy {eq.energy:.8g}")

    q2_seed = inner_turning_point(params, eq, E)
    seed = np.array([0.0, 0.0, q2_seed, 0.0])

    # Second p2 = 0 crossing going downward is the full period; the first
    # downward "event" is the launch point itself (solve_ivp reports the
    # exact-zero start), so stop after two.
    def p2_down(t, y):
        return y[3]

    p2_down.direction = -1
    p2_down.terminal = 2

    nu = eq.rates[1]
    t_max = 6.0 * math.pi / nu
    while True:
        try:
            sol, _ = _integrate_raw(params, seed, 0.0, t_max, rtol, atol, events=[p2_down])
        except StiffnessError as exc:
            # The deviation runs away instead of turning: no outer turning point.
            raise OrbitExistenceError(
                f"trajectory escapes before closing at E = {E:.8g}; "
                "energy is above the family's existence bound"
            ) from exc
        hits = [t for t in sol.t_events[1] if t > 1e-9]
        if hits:
            t_p = float(hits[0])
            break
        if t_max >= t_max_cap:
            raise OrbitExistenceError(
                f"no closed orbit within t = {t_max_cap:g} at E = {E:.8g}; "
                "energy is above the family's existence bound"
            )
        t_max = min(2.0 * t_max, t_max_cap)

    stm = integrate_with_stm(params, seed, (0.0, t_p), rtol=rtol, atol=atol)
    residual = float(np.max(np.abs(stm.trajectory.states[-1] - seed)))
    if residual > 1e-9 * max(1.0, float(np.max(np.abs(seed)))):
        raise OrbitExistenceError(f"periodicity residual {residual:.3g} too large at E = {E:.8g}")
    orbit = PeriodicOrbit(
        energy=float(E),
        seed=seed,
        period=t_p,
        samples=stm.trajectory,
        monodromy=stm.final_stm,
        params=params,
    )
    orbit._hyperbolic_pair()  # raises HyperbolicityLostError at the family boundary
    return orbit


def family_energy_ceiling(params: ModelParams, eq: Equilibrium, e_tol: float = 1e-4) -> float:
    """Largest energy (to ``e_tol``) at which the orbit family still exists."""

    def ok(E):
        try:
            orbit_at_energy(params, eq, E)
            return True
        except (OrbitExistenceError, HyperbolicityLostError):
            return False

    span = 1e-3
    lo = eq.energy + span
    if not ok(lo):
        raise OrbitExistenceError("orbit family not found just above the equilibrium energy")
    while ok(lo + span):
        lo += span
        span *= 2.0
    hi = lo + span
    while hi - lo > e_tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _strand(params, y0, branch: TubeBranch, t_int, rtol, atol, q1_stop):
    """Integrate one displaced point away from the orbit.

    Unstable strands run forward over [0, t_int]; stable strands run
    backward and are stored over [-t_int, 0] so times stay increasing.
    Strands stop early at |q1| = q1_stop: the mean runs away down the
    quartic potential and blows up in finite time beyond the bottleneck.
    """

    def escape(t, y):
        return abs(y[0]) - q1_stop

    escape.terminal = True
    if branch is TubeBranch.UNSTABLE:
        sol, collapsed = _integrate_raw(
            params, y0, 0.0, t_int, rtol, atol, events=[escape], raise_on_collapse=False
        )
        times, states = sol.t, sol.y.T
    else:
        sol, collapsed = _integrate_raw(
            params, y0, 0.0, -t_int, rtol, atol, events=[escape], raise_on_collapse=False
        )
        times, states = sol.t[::-1], sol.y.T[::-1]
    traj = Trajectory(
        times=times,
        states=states,
        energy0=float(energy(params, np.asarray(y0, dtype=float))),
        params=params,
        interp=sol.sol,
    )
    return traj, collapsed


def tube(
    params: ModelParams,
    po: PeriodicOrbit,
    branch: TubeBranch | str,
    side: int,
    d: float | None = None,
    n_strands: int = 32,
    t_int: float = 60.0,
    q1_stop: float = 12.0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> TubeManifold:
    """Globalize a stable or unstable tube of a periodic orbit.

    Launch points sit ``d`` along the monodromy eigendirection transported
    to ``n_strands`` equally spaced phases of the orbit; ``side`` selects
    the displacement sign by the q1 component (+1 toward q1 > 0).  The
    default ``d`` is 1e-5 times the orbit's q2 amplitude.  Strands that hit
    the q2 floor are kept and flagged truncated.
    """
    branch = TubeBranch(branch)
    if side not in (-1, 1):
        raise ValueError("side must be +1 or -1")
    if n_strands < 8:
        raise ValueError("n_strands must be at least 8")
    if d is None:
        d = 1e-5 * po.q2_amplitude
    if not 0 < d <= 1e-2 * max(po.q2_amplitude, 1e-12):
        raise ValueError(f"displacement d = {d:g} is not small relative to the orbit")

    v = po.unstable_direction if branch is TubeBranch.UNSTABLE else po.stable_direction
    taus = np.linspace(0.0, po.period, n_strands, endpoint=False)
    stm = integrate_with_stm(params, po.seed, (0.0, po.period), rtol=1e-12, atol=1e-12, t_eval=taus)
    launch_states = np.empty((n_strands, 4))
    strands: list[Trajectory] = []
    truncated: list[bool] = []
    for k in range(n_strands):
        w = stm.stms[k] @ v
        w = w / np.linalg.norm(w)
        if abs(w[0]) < 1e-6:
            warnings.warn(f"hyperbolic direction nearly tangent to q1 = 0 at phase {taus[k]:.4g}", RuntimeWarning)
        if w[0] < 0:
            w = -w
        y0 = stm.trajectory.states[k] + side * d * w
        launch_states[k] = y0
        traj, collapsed = _strand(params, y0, branch, t_int, rtol, atol, q1_stop)
        strands.append(traj)
        truncated.append(bool(collapsed))
    return TubeManifold(
        branch=branch,
        side=side,
        displacement=float(d),
        strands=strands,
        energy=po.energy,
        launch_times=taus,
        launch_states=launch_states,
        truncated=truncated,
    )


def tube_plane_crossings(manifold: TubeManifold, q1_value: float, params: ModelParams) -> list[SectionEvent | None]:
    """First crossing of the plane q1 = ``q1_value`` along each strand.

    "First" is measured flowing away from the orbit: smallest time for
    unstable strands, largest (least negative) time for stable ones.
    """
    out: list[SectionEvent | None] = []
    for strand in manifold.strands:
        events = find_section_crossings(strand, "q1", params, value=q1_value)
        if not events:
            out.append(None)
        elif manifold.branch is TubeBranch.UNSTABLE:
            out.append(events[0])
        else:
            out.append(events[-1])
    return out


def transit_test_nonlinear(
    params: ModelParams,
    state,
    q1_exit: float,
    t_max: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> TransitOutcome:
    """Integrate until |q1| reaches ``q1_exit`` and compare sides.

    Transited means the trajectory left on the side opposite to
    sign(q1(0)); bounced means the same side; undecided means the horizon
    ``t_max`` passed without reaching either exit plane.
    """
    state = np.asarray(state, dtype=float)
    if abs(state[0]) >= q1_exit:
        raise ValueError("initial state must satisfy |q1| < q1_exit")
    entry = int(np.sign(state[0]))

    def hi(t, y):
        return y[0] - q1_exit

    def lo(t, y):
        return y[0] + q1_exit

    hi.terminal = True
    hi.direction = 1
    lo.terminal = True
    lo.direction = -1
    sol, collapsed = _integrate_raw(
        params, state, 0.0, t_max, rtol, atol, events=[hi, lo], raise_on_collapse=False
    )
    hit_hi = sol.t_events[1].size > 0
    hit_lo = sol.t_events[2].size > 0
    if not (hit_hi or hit_lo):
        return TransitOutcome.UNDECIDED
    exit_side = 1 if hit_hi else -1
    if entry == 0:
        return TransitOutcome.TRANSITED  # launched from the section itself
    return TransitOutcome.TRANSITED if exit_side == -entry else TransitOutcome.BOUNCED


def slab_exit_face(
    params: ModelParams,
    eq: Equilibrium,
    basis: EigenBasis,
    C: float,
    state,
    t_max: float,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> int | None:
    """Which slab face |zeta + eta| = C a bottleneck trajectory exits through.

    Returns +1 or -1, or None if it stays in the slab for ``t_max``.  A
    start exactly on a face moving inward does not trigger that face.
    """
    row = basis.T_inv[0] + basis.T_inv[1]
    x_eq = eq.state

    def face_hi(t, y):
        return float(row @ (y - x_eq)) - C

    def face_lo(t, y):
        return float(row @ (y - x_eq)) + C

    face_hi.terminal = True
    face_hi.direction = 1
    face_lo.terminal = True
    face_lo.direction = -1
    sol, _ = _integrate_raw(
        params, state, 0.0, t_max, rtol, atol, events=[face_hi, face_lo], raise_on_collapse=False
    )
    hit_hi = sol.t_events[1].size > 0
    hit_lo = sol.t_events[2].size > 0
    if hit_hi and hit_lo:
        return 1 if sol.t_events[1][0] < sol.t_events[2][0] else -1
    if hit_hi:
        return 1
    if hit_lo:
        return -1
    return None
