"""Time integration, variational equations and section-crossing detection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .errors import SingularityError, StiffnessError
from .model import ModelParams, energy, state_jacobian, vector_field

Q2_FLOOR = 1e-6  # V is singular at q2 = 0; abort before getting there

_SECTION_INDEX = {"q1": 0, "p1": 1, "q2": 2, "p2": 3}


def _rhs(params: ModelParams):
    """Scalar-math right-hand side; avoids numpy overhead in the hot loop."""
    mu, eps, h = params.mu, params.epsilon, params.h
    a = params.alpha
    k = params.interaction_coeff
    musig4 = mu * params.sigma**4
    inv_mu = 1.0 / mu
    inv_epsmu = 1.0 / (eps * eps * mu)

    floor = 0.01 * Q2_FLOOR

    def rhs(t, y):
        q1, p1, q2, p2 = y[0], y[1], y[2], y[3]
        # Step attempts may probe below the q2 floor before the collapse
        # event terminates the solve; keep the evaluation finite there.
        if q2 < floor:
            q2 = floor
        s = eps * q2
        s2 = s * s
        return (
            -p1 * inv_mu,
            -q1 * (q1 * q1 + h + 3.0 * s2),
            -p2 * inv_epsmu,
            eps * (0.25 * musig4 / (s * s2) - k * a / s ** (a + 1.0) - s * (3.0 * q1 * q1 + h) - 3.0 * s * s2),
        )

    return rhs


@dataclass
class Trajectory:
    """Sampled solution of the Hamiltonian flow.

    ``states`` has one row per time sample in (q1, p1, q2, p2) order.  When
    produced by :func:`integrate` a dense interpolant is attached and used
    for event refinement.
    """

    times: np.ndarray
    states: np.ndarray
    energy0: float
    params: ModelParams
    interp: object | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape != (self.times.size, 4):
            raise ValueError("states must have shape (len(times), 4)")
        if self.times.size >= 2 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def energies(self) -> np.ndarray:
        return energy(self.params, self.states)

    def energy_drift(self) -> float:
        """Max relative energy deviation from the initial energy."""
        e = self.energies()
        return float(np.max(np.abs(e - self.energy0)) / max(1.0, abs(self.energy0)))

    def state_at(self, t):
        """Dense evaluation; falls back to a Hermite fit through the samples."""
        return self._interpolant()(t)

    def _interpolant(self):
        if self.interp is None:
            derivs = vector_field(self.params, self.states)
            self.interp = CubicHermiteSpline(self.times, self.states, derivs, axis=0)
        return self.interp

    def to_csv(self, path) -> None:
        """Write t,q1,p1,q2,p2,E rows with 17 significant digits."""
        e = self.energies()
        with open(path, "w", newline="") as fh:
            fh.write("t,q1,p1,q2,p2,E\n")
            for t, row, ei in zip(self.times, self.states, e):
                cells = ",".join(f"{v:.17g}" for v in (t, *row, ei))
                fh.write(cells + "\n")


@dataclass
class StmTrajectory:
    """Trajectory plus the state-transition matrices Phi(t_k, t0)."""

    trajectory: Trajectory
    stms: np.ndarray  # (n, 4, 4)

    @property
    def final_stm(self) -> np.ndarray:
        return self.stms[-1]


@dataclass(frozen=True)
class SectionEvent:
    """A refined crossing of a coordinate section."""

    time: float
    state: np.ndarray
    section: str
    direction: int
    tangential: bool = False


def _run_ivp(fun, t_span, y0, rtol, atol, t_eval, events, max_step):
    sol = solve_ivp(
        fun,
        t_span,
        y0,
        method="DOP853",
        rtol=rtol,
        atol=atol,
        t_eval=t_eval,
        events=events,
        dense_output=True,
        max_step=max_step,
    )
    if sol.status == -1:
        raise StiffnessError(f"integrator step failure: {sol.message}")
    return sol


def _integrate_raw(params, state0, t0, t1, rtol, atol, t_eval=None, max_step=np.inf, events=(), raise_on_collapse=True):
    """solve_ivp in either time direction with the q2-collapse guard.

    Returns ``(sol, collapsed)``; extra terminal/report ``events`` follow the
    collapse guard in ``sol.t_events[1:]``.
    """
    state0 = np.asarray(state0, dtype=float)
    if state0.shape != (4,):
        raise ValueError("state0 must be a 4-vector")
    if state0[2] <= 0.0:
        raise SingularityError("initial state has q2 <= 0", blow_up_time=t0)

    def hit_floor(t, y):
        return y[2] - Q2_FLOOR

    hit_floor.terminal = True
    sol = _run_ivp(_rhs(params), (t0, t1), state0, rtol, atol, t_eval, [hit_floor, *events], max_step)
    collapsed = sol.t_events[0].size > 0
    if collapsed and raise_on_collapse:
        raise SingularityError(
            f"q2 collapsed below {Q2_FLOOR:g} at t = {sol.t_events[0][0]:.6g}",
            blow_up_time=float(sol.t_events[0][0]),
        )
    return sol, collapsed


def integrate(
    params: ModelParams,
    state0,
    t_span,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    t_eval=None,
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate the flow forward over ``t_span = (t0, t1)`` with t1 > t0.

    Energy drift stays within about 1e-9 relative at rtol = 1e-12 over
    horizons of order ten.  Raises :class:`SingularityError` if the
    deviation collapses and :class:`StiffnessError` on step underflow.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must satisfy t1 > t0")
    sol, _ = _integrate_raw(params, state0, t0, t1, rtol, atol, t_eval, max_step)
    return Trajectory(
        times=sol.t,
        states=sol.y.T,
        energy0=float(energy(params, np.asarray(state0, dtype=float))),
        params=params,
        interp=sol.sol,
    )


def _rhs_stm(params: ModelParams):
    rhs = _rhs(params)
    floor = 0.01 * Q2_FLOOR

    def rhs20(t, y):
        x = y[:4].copy()
        if x[2] < floor:
            x[2] = floor
        phi = y[4:].reshape(4, 4)
        jac = state_jacobian(params, x)
        out = np.empty(20)
        out[:4] = rhs(t, x)
        out[4:] = (jac @ phi).ravel()
        return out

    return rhs20


def integrate_with_stm(
    params: ModelParams,
    state0,
    t_span,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    t_eval=None,
) -> StmTrajectory:
    """Integrate the flow together with the variational equations.

    The returned matrices satisfy Phi(t0, t0) = I and det Phi = 1 up to
    integration tolerance (symplectic flow).
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 == t0:
        state0 = np.asarray(state0, dtype=float)
        traj = Trajectory(np.array([t0]), state0[None, :], float(energy(params, state0)), params)
        return StmTrajectory(traj, np.eye(4)[None, :, :])
    state0 = np.asarray(state0, dtype=float)
    if state0[2] <= 0.0:
        raise SingularityError("initial state has q2 <= 0", blow_up_time=t0)

    y0 = np.concatenate([state0, np.eye(4).ravel()])

    def hit_floor(t, y):
        return y[2] - Q2_FLOOR

    hit_floor.terminal = True
    sol = _run_ivp(_rhs_stm(params), (t0, t1), y0, rtol, atol, t_eval, [hit_floor], np.inf)
    if sol.t_events[0].size > 0:
        raise SingularityError(
            f"q2 collapsed below {Q2_FLOOR:g} at t = {sol.t_events[0][0]:.6g}",
            blow_up_time=float(sol.t_events[0][0]),
        )
    states = sol.y[:4].T
    traj = Trajectory(
        times=sol.t,
        states=states,
        energy0=float(energy(params, state0)),
        params=params,
    )
    stms = sol.y[4:].T.reshape(-1, 4, 4)
    return StmTrajectory(traj, stms)


def find_section_crossings(
    traj: Trajectory,
    section: str,
    params: ModelParams | None = None,
    value: float = 0.0,
    coord_tol: float = 1e-10,
) -> list[SectionEvent]:
    """Locate crossings of ``section coordinate == value`` along a trajectory.

    Every sign change between stored samples is refined on the dense
    interpolant until the coordinate is below ``coord_tol``.  Crossings with
    a near-zero transversal speed are flagged tangential (and warned about)
    rather than merged.
    """
    if section not in _SECTION_INDEX:
        raise ValueError(f"unknown section {section!r}; expected one of {sorted(_SECTION_INDEX)}")
    idx = _SECTION_INDEX[section]
    params = params or traj.params
    times, states = traj.times, traj.states
    if times.size < 2:
        return []

    spline = traj._interpolant()

    def g(t):
        return float(spline(t)[idx]) - value

    vals = states[:, idx] - value
    scale = max(1.0, float(np.max(np.abs(vals))))
    # Samples indistinguishable from the section (integrator noise around an
    # exact zero) must not generate events of their own.
    on_section = np.abs(vals) <= max(1e-14 * scale, 0.1 * coord_tol)
    if np.all(on_section):
        return []
    events: list[SectionEvent] = []
    for i in range(times.size - 1):
        # Left endpoints on the section are skipped: a sample sitting exactly
        # on the section is counted once, as the right endpoint of the
        # preceding interval, and a trajectory *starting* on the section does
        # not count its own launch point.
        if on_section[i]:
            continue
        a, b = vals[i], vals[i + 1]
        if on_section[i + 1]:
            t_star = float(times[i + 1])
        elif a * b < 0.0:
            ta, tb = times[i], times[i + 1]
            if g(ta) * g(tb) < 0.0:
                t_star = brentq(g, ta, tb, xtol=1e-14, rtol=1e-15)
            else:  # spline endpoint noise; polish from the midpoint instead
                t_star = 0.5 * (ta + tb)
        else:
            continue
        state = np.asarray(spline(t_star), dtype=float)
        speed = float(vector_field(params, state)[idx])
        tangential = abs(speed) < 1e-8 * scale
        if tangential:
            warnings.warn(
                f"tangential {section} = {value:g} crossing at t = {t_star:.6g}",
                RuntimeWarning,
                stacklevel=2,
            )
        if abs(state[idx] - value) > coord_tol and not tangential:
            # Newton polish on the flow, in case the bracket was marginal.
            for _ in range(6):
                t_star -= (float(spline(t_star)[idx]) - value) / float(
                    vector_field(params, np.asarray(spline(t_star)))[idx]
                )
            state = np.asarray(spline(t_star), dtype=float)
        direction = int(np.sign(speed)) if speed != 0.0 else int(np.sign(b - a))
        events.append(
            SectionEvent(time=float(t_star), state=state, section=section, direction=direction, tangential=tangential)
        )
    return events
