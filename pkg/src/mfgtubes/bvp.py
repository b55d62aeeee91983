"""Two-point BVP solver, continuation in the horizon, and branch topology.

The solver is 4th-order collocation (C1 cubic splines collocated at mesh
nodes and midpoints, the 3-stage Lobatto structure) with a damped Newton
iteration and residual-driven mesh refinement, as provided by
scipy.integrate.solve_bvp.  Everything downstream of the solve -- defect
measurement, rotation counts, phase decomposition, continuation and the
bifurcation table -- is implemented here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_bvp as _scipy_solve_bvp
from scipy.optimize import brentq

from .errors import BvpConvergenceError, InfeasibleGuessError, OrbitExistenceError
from .model import ModelParams, energy, state_jacobian, vector_field
from .spectral import Equilibrium

DEFAULT_Q1_WINDOW = 0.5  # ergodic window half-width on |q1|


@dataclass(frozen=True)
class BoundaryConditions:
    """Initial and final mean / scaled deviation."""

    q1_0: float
    q2_0: float
    q1_T: float
    q2_T: float

    def __post_init__(self):
        if self.q2_0 <= 0 or self.q2_T <= 0:
            raise ValueError("boundary deviations must be positive")


@dataclass
class BvpSolution:
    """Converged collocation solution over one horizon."""

    T: float
    mesh: np.ndarray
    states: np.ndarray  # (n_nodes, 4)
    energy: float  # evaluated at t = 0
    residual: float  # max defect of the collocation spline
    params: ModelParams
    bc: BoundaryConditions
    spline: object = field(repr=False, default=None)
    rotations: int | None = None
    phases: tuple[float, float, float] | None = None

    def state_at(self, t):
        return np.asarray(self.spline(t)).T

    def energy_profile(self) -> np.ndarray:
        return energy(self.params, self.states)

    def boundary_residual(self) -> float:
        bc = self.bc
        ya, yb = self.states[0], self.states[-1]
        return float(
            max(abs(ya[0] - bc.q1_0), abs(ya[2] - bc.q2_0), abs(yb[0] - bc.q1_T), abs(yb[2] - bc.q2_T))
        )

    def to_csv(self, path, n_samples: int | None = None) -> None:
        """Write t,q1,p1,q2,p2 rows; dense resampling when requested."""
        if n_samples is None:
            ts, rows = self.mesh, self.states
        else:
            ts = np.linspace(0.0, self.T, n_samples)
            rows = self.state_at(ts)
        with open(path, "w", newline="") as fh:
            fh.write("t,q1,p1,q2,p2\n")
            for t, row in zip(ts, rows):
                fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")


@dataclass
class StepPolicy:
    """Natural-parameter continuation step control."""

    dT: float = 0.1
    dT_min: float = 1e-4
    dT_max: float = 0.25
    growth: float = 1.3


@dataclass
class Branch:
    """A family of solutions sharing one rotation count."""

    label: str
    solutions: list[BvpSolution]
    topology: int | None = None
    exhausted_low: bool = False
    exhausted_high: bool = False

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(s.T, s.energy) for s in self.solutions]

    def solution_at(self, T: float) -> BvpSolution | None:
        """Member solution closest to horizon T."""
        if not self.solutions:
            return None
        return min(self.solutions, key=lambda s: abs(s.T - T))

    @property
    def t_range(self) -> tuple[float, float]:
        ts = [s.T for s in self.solutions]
        return (min(ts), max(ts))


def straight_line_guess(params: ModelParams, bc: BoundaryConditions, T: float, n_nodes: int = 61):
    """Linear-in-time configuration guess with momenta from the velocities."""
    ts = np.linspace(0.0, T, n_nodes)
    q1 = bc.q1_0 + (bc.q1_T - bc.q1_0) * ts / T
    q2 = bc.q2_0 + (bc.q2_T - bc.q2_0) * ts / T
    p1 = np.full_like(ts, -params.mu * (bc.q1_T - bc.q1_0) / T)
    p2 = np.full_like(ts, -params.epsilon**2 * params.mu * (bc.q2_T - bc.q2_0) / T)
    return ts, np.column_stack([q1, p1, q2, p2])


def ballistic_guess(
    params: ModelParams, bc: BoundaryConditions, T: float, n_nodes: int = 401, q2_channel: float | None = None
):
    """Fixed-channel energy-shell guess for transit boundary conditions.

    The mean coordinate follows the one-degree-of-freedom motion in the
    channel potential V(q1, q2_channel), with the channel energy chosen so
    the crossing time matches T; the deviation pair is held at the channel
    value.  Useful as a topology-setting Newton start at short horizons.
    """
    from scipy.optimize import brentq

    if q2_channel is None:
        q2_channel = 0.5 * (bc.q2_0 + bc.q2_T)
    qs = np.linspace(bc.q1_0, bc.q1_T, 3001)
    V = potential_energy(params, qs, q2_channel)

    def crossing_time(E):
        v = np.sqrt(2.0 * (E - V) / params.mu)
        return float(np.trapezoid(1.0 / v, qs))

    E_top = float(np.max(V))
    E = brentq(lambda E: crossing_time(E) - T, E_top + 1e-9, 1e9, xtol=1e-13)
    v = np.sqrt(2.0 * (E - V) / params.mu)
    t_of_q = np.concatenate([[0.0], np.cumsum(np.diff(qs) / (0.5 * (v[1:] + v[:-1])))])
    t_of_q *= T / t_of_q[-1]
    ts = np.linspace(0.0, T, n_nodes)
    q1 = np.interp(ts, t_of_q, qs)
    p1 = -params.mu * np.interp(ts, t_of_q, v) * np.sign(bc.q1_T - bc.q1_0)
    q2 = np.full(n_nodes, q2_channel)
    p2 = np.zeros(n_nodes)
    return ts, np.column_stack([q1, p1, q2, p2])


def max_defect(sol: BvpSolution, samples_per_interval: int = 4) -> float:
    """Max-abs ODE defect of the collocation spline at off-collocation points.

    The spline satisfies the equations exactly at nodes and midpoints, so
    the defect is probed at interior quarter points.
    """
    offsets = (np.arange(1, samples_per_interval + 1) - 0.5) / (samples_per_interval + 1)
    x = sol.mesh
    h = np.diff(x)
    ts = (x[:-1, None] + h[:, None] * offsets[None, :]).ravel()
    y = np.asarray(sol.spline(ts)).T
    dy = np.asarray(sol.spline.derivative()(ts)).T
    f = vector_field(sol.params, y)
    return float(np.max(np.abs(dy - f)))


def solve_bvp(
    params: ModelParams,
    bc: BoundaryConditions,
    T: float,
    guess=None,
    tol: float = 1e-8,
    max_nodes: int = 100_000,
    bc_tol: float = 1e-11,
) -> BvpSolution:
    """Solve the two-point BVP over [0, T].

    ``guess`` may be None (straight-line builtin), a ``(times, states)``
    pair, or a previous :class:`BvpSolution` (re-meshed onto [0, T]).
    Raises :class:`InfeasibleGuessError` if the guess leaves q2 > 0 and
    :class:`BvpConvergenceError` (carrying the last iterate) if the damped
    Newton iteration stagnates.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if guess is None:
        ts, ys = straight_line_guess(params, bc, T)
    elif isinstance(guess, BvpSolution):
        ts = guess.mesh * (T / guess.T)
        ys = guess.states.copy()
    else:
        ts, ys = np.asarray(guess[0], dtype=float), np.asarray(guess[1], dtype=float)
        if not math.isclose(ts[-1], T, rel_tol=1e-12):
            ts = ts * (T / ts[-1])
    if np.any(ys[:, 2] <= 0):
        raise InfeasibleGuessError("guess has nonpositive q2 on the mesh")

    # Newton iterates may momentarily leave q2 > 0; evaluate the field on a
    # clamped copy so the iteration can recover, and reject any converged
    # solution that still touches the clamp region.
    q2_floor = 1e-2 * min(bc.q2_0, bc.q2_T)

    def _clamped(y):
        yc = np.array(y.T, dtype=float)
        yc[..., 2] = np.clip(yc[..., 2], q2_floor, None)
        return yc

    def fun(t, y):
        return vector_field(params, _clamped(y)).T

    def fun_jac(t, y):
        return np.moveaxis(state_jacobian(params, _clamped(y)), 0, 2)

    def bc_fun(ya, yb):
        return np.array([ya[0] - bc.q1_0, ya[2] - bc.q2_0, yb[0] - bc.q1_T, yb[2] - bc.q2_T])

    def bc_jac(ya, yb):
        dya = np.zeros((4, 4))
        dyb = np.zeros((4, 4))
        dya[0, 0] = dya[1, 2] = 1.0
        dyb[2, 0] = dyb[3, 2] = 1.0
        return dya, dyb

    res = _scipy_solve_bvp(
        fun,
        bc_fun,
        ts,
        ys.T,
        fun_jac=fun_jac,
        bc_jac=bc_jac,
        tol=tol,
        max_nodes=max_nodes,
        bc_tol=bc_tol,
    )
    if res.status != 0:
        raise BvpConvergenceError(f"collocation failed: {res.message}", last_iterate=res)
    states = res.y.T
    if np.any(states[:, 2] <= 2.0 * q2_floor):
        raise BvpConvergenceError("converged iterate leaves the q2 > 0 domain", last_iterate=res)
    solution = BvpSolution(
        T=float(T),
        mesh=res.x,
        states=states,
        energy=float(energy(params, states[0])),
        residual=0.0,
        params=params,
        bc=bc,
        spline=res.sol,
    )
    solution.residual = max_defect(solution)
    return solution


def _window_times(sol: BvpSolution, q1_window: float, n_probe: int) -> tuple[float, float] | None:
    """First entry / last exit time of |q1| <= q1_window, by spline roots."""
    ts = np.linspace(0.0, sol.T, n_probe)
    q1 = np.asarray(sol.spline(ts))[0]
    inside = np.abs(q1) <= q1_window
    if not np.any(inside):
        return None

    def depth(t):
        return q1_window - abs(float(sol.spline(t)[0]))

    i_first = int(np.argmax(inside))
    i_last = n_probe - 1 - int(np.argmax(inside[::-1]))
    t_a = ts[i_first]
    if i_first > 0:
        t_a = brentq(depth, ts[i_first - 1], ts[i_first], xtol=1e-12)
    t_b = ts[i_last]
    if i_last < n_probe - 1:
        t_b = brentq(depth, ts[i_last], ts[i_last + 1], xtol=1e-12)
    return float(t_a), float(t_b)


def _probe_count(sol: BvpSolution) -> int:
    # Enough samples to resolve the fast deviation oscillation everywhere.
    return max(1201, 40 * sol.mesh.size)


def rotation_count(sol: BvpSolution, eq: Equilibrium, q1_window: float = DEFAULT_Q1_WINDOW) -> int:
    """Number of p2 = 0 crossings inside the ergodic window |q1| <= window."""
    n_probe = _probe_count(sol)
    ts = np.linspace(0.0, sol.T, n_probe)
    vals = np.asarray(sol.spline(ts))
    p2 = vals[3]
    count = 0
    for i in range(n_probe - 1):
        a, b = p2[i], p2[i + 1]
        if a == 0.0:
            continue
        if a * b < 0.0:
            t_star = brentq(lambda t: float(sol.spline(t)[3]), ts[i], ts[i + 1], xtol=1e-12)
        elif b == 0.0:
            t_star = ts[i + 1]
        else:
            continue
        q1_star = float(sol.spline(t_star)[0])
        if abs(q1_star) <= q1_window:
            count += 1
    return count


def phase_decomposition(
    sol: BvpSolution, eq: Equilibrium, q1_window: float = DEFAULT_Q1_WINDOW
) -> tuple[float, float, float]:
    """(arrival, ergodic, departure) durations; they sum to T exactly."""
    win = _window_times(sol, q1_window, _probe_count(sol))
    if win is None:
        raise ValueError("solution never enters the ergodic window")
    t_a, t_b = win
    return (t_a, t_b - t_a, sol.T - t_b)


def annotate_topology(sol: BvpSolution, eq: Equilibrium, q1_window: float = DEFAULT_Q1_WINDOW) -> BvpSolution:
    """Fill the rotation count and phase split on a solved solution."""
    sol.rotations = rotation_count(sol, eq, q1_window)
    try:
        sol.phases = phase_decomposition(sol, eq, q1_window)
    except ValueError:
        sol.phases = None
    return sol


def continue_branch(
    params: ModelParams,
    bc: BoundaryConditions,
    seed: BvpSolution,
    T_range,
    policy: StepPolicy | None = None,
    eq: Equilibrium | None = None,
    q1_window: float = DEFAULT_Q1_WINDOW,
    label: str = "B?",
    tol: float = 1e-8,
) -> Branch:
    """Natural-parameter continuation of a solution family in the horizon.

    Both directions from the seed are walked with the previous solution
    re-meshed as the predictor.  A step is rejected (and halved) when the
    solver fails, when the rotation count changes (topology guard, active
    when ``eq`` is given), or when the energy jumps discontinuously; the
    step floor terminates the branch on that side.
    """
    policy = policy or StepPolicy()
    t_lo, t_hi = float(T_range[0]), float(T_range[1])
    if eq is not None:
        annotate_topology(seed, eq, q1_window)
    branch = Branch(label=label, solutions=[seed], topology=seed.rotations)

    def accept(prev: BvpSolution, T_next: float) -> BvpSolution | None:
        try:
            sol = solve_bvp(params, bc, T_next, guess=prev, tol=tol)
        except (BvpConvergenceError, InfeasibleGuessError):
            return None
        if eq is not None:
            annotate_topology(sol, eq, q1_window)
            if branch.topology is not None and sol.rotations != branch.topology:
                return None
        dE_prev = abs(prev.energy) + 1.0
        if abs(sol.energy - prev.energy) > 0.5 * dE_prev:
            return None  # discontinuous jump onto a different family
        return sol

    for direction in (+1, -1):
        prev = seed
        dT = policy.dT
        while True:
            t_next = prev.T + direction * dT
            if direction > 0 and t_next > t_hi + 1e-12:
                branch.exhausted_high = True
                break
            if direction < 0 and t_next < t_lo - 1e-12:
                branch.exhausted_low = True
                break
            sol = accept(prev, t_next)
            if sol is None:
                dT *= 0.5
                if dT < policy.dT_min:
                    break
                continue
            branch.solutions.append(sol)
            prev = sol
            dT = min(dT * policy.growth, policy.dT_max)
    branch.solutions.sort(key=lambda s: s.T)
    return branch


def branch_origin(branch: Branch) -> BvpSolution:
    """Lowest-energy member of a branch (its bifurcation-point end)."""
    return min(branch.solutions, key=lambda s: s.energy)


def bifurcation_diagram(branches: list[Branch]) -> list[tuple[str, float, float, int]]:
    """Merged, deterministically sorted (branch, T, E, n) table."""
    rows = []
    for br in sorted(branches, key=lambda b: b.label):
        for sol in sorted(br.solutions, key=lambda s: s.T):
            rows.append((br.label, sol.T, sol.energy, -1 if sol.rotations is None else sol.rotations))
    return rows


def symmetric_transit_seeds(
    params: ModelParams,
    bc: BoundaryConditions,
    E: float,
    n_scan: int = 300,
    q2_span=None,
    t_back: float = 20.0,
    tol: float = 1e-8,
) -> list[BvpSolution]:
    """Certified symmetric transit solutions at one energy level.

    For symmetric boundary conditions (h = 0, q1_T = -q1_0, q2_T = q2_0) a
    symmetric solution crosses its single q1 = 0 section point with p2 = 0,
    so candidates reduce to a one-parameter sweep of the section deviation:
    each backward arc is flown to the initial plane, the boundary residual
    in the arriving deviation is bracketed, and each root's mirrored arc is
    handed to the collocation solver for certification.
    """
    from .dynamics import _integrate_raw
    from .model import potential_energy

    if not (abs(bc.q1_T + bc.q1_0) < 1e-12 and abs(bc.q2_T - bc.q2_0) < 1e-12):
        raise ValueError("symmetric seeding requires mirror-symmetric boundary conditions")
    if params.h != 0.0:
        raise ValueError("symmetric seeding requires h = 0")
    plane = float(bc.q1_0)

    def arc(q2s):
        kin = E - potential_energy(params, 0.0, q2s)
        if kin <= 0:
            return None
        y0 = np.array([0.0, np.sign(plane) * np.sqrt(2.0 * params.mu * kin), q2s, 0.0])

        def hit(t, y):
            return y[0] - plane

        hit.terminal = True

        def blow(t, y):
            return y[2] - 100.0 * bc.q2_0

        blow.terminal = True
        try:
            sol, _ = _integrate_raw(
                params, y0, 0.0, -t_back, 1e-10, 1e-12, events=[hit, blow], raise_on_collapse=False
            )
        except Exception:
            return None
        if sol.t_events[1].size == 0:
            return None
        return sol

    def boundary_residual(q2s):
        sol = arc(q2s)
        if sol is None:
            return np.nan
        return float(sol.y_events[1][0][2]) - bc.q2_0

    if q2_span is None:
        lo = 0.2 * bc.q2_0
        hi = 4.0 * bc.q2_0
    else:
        lo, hi = q2_span
    qs = np.linspace(lo, hi, n_scan)
    vals = np.array([boundary_residual(q) for q in qs])

    seeds = []
    for i in range(n_scan - 1):
        a, b = vals[i], vals[i + 1]
        if np.isnan(a) or np.isnan(b) or a * b >= 0:
            continue
        root = brentq(boundary_residual, qs[i], qs[i + 1], xtol=1e-12)
        sol = arc(root)
        t_half = float(sol.t_events[1][0])
        ts_b = np.linspace(t_half, 0.0, 400)
        ys_b = sol.sol(ts_b).T
        mirror = np.array([-1.0, 1.0, 1.0, -1.0])
        T = -2.0 * t_half
        ts = np.concatenate([ts_b - t_half, (-t_half) - ts_b[::-1][1:] + (-t_half)])
        ys = np.vstack([ys_b, (ys_b * mirror)[::-1][1:]])
        try:
            certified = solve_bvp(params, bc, T, guess=(ts, ys), tol=tol)
        except (BvpConvergenceError, InfeasibleGuessError):
            continue
        seeds.append(certified)
    return seeds


def solutions_at(
    params: ModelParams,
    bc: BoundaryConditions,
    branches: list[Branch],
    T: float,
    eq: Equilibrium | None = None,
    q1_window: float = DEFAULT_Q1_WINDOW,
    tol: float = 1e-8,
) -> list[BvpSolution]:
    """All coexisting solutions at one horizon, one per covering branch."""
    found = []
    for br in branches:
        lo, hi = br.t_range
        if not (lo - 1e-9 <= T <= hi + 1e-9):
            continue
        try:
            sol = solve_bvp(params, bc, T, guess=br.solution_at(T), tol=tol)
        except BvpConvergenceError:
            continue
        if eq is not None:
            annotate_topology(sol, eq, q1_window)
        found.append(sol)
    return found
