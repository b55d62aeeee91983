"""Finite-difference solver for the planning problem and moment extraction.

The coupled system (backward value function, forward density) is solved by
damped Picard sweeps: each iteration solves the nonlinear backward equation
time step by time step with Newton on a banded Jacobian, then the linear
forward equation with a banded direct solve, then averages the new tables
into the old ones.  The final value function is imposed through a penalty
on the final-density mismatch.

Spatial derivatives are central in the interior; the two boundary nodes
use one-sided first differences and first-order one-sided second
differences (free boundaries, isolated in :func:`_banded_operators`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import DegenerateDensityError, GridDomainError, NewtonError, SingularSystemError
from .model import ModelParams, lagrangian_to_phase

__all__ = [
    "Grid",
    "PdeConfig",
    "PdeFields",
    "ConvergenceLog",
    "gaussian_density",
    "cost_terms",
    "hjb_backward_step",
    "fp_forward_step",
    "picard_solve",
    "extract_moments",
    "compare_topology",
]


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on [-L/2, L/2] x [0, T]."""

    L: float
    Nx: int
    Nt: int
    T: float

    def __post_init__(self):
        if self.L <= 0 or self.T <= 0 or self.Nx < 4 or self.Nt < 1:
            raise ValueError("grid must have positive extents and at least 4x1 cells")

    @property
    def dx(self) -> float:
        return self.L / self.Nx

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L / 2.0, self.L / 2.0, self.Nx + 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)


@dataclass(frozen=True)
class PdeConfig:
    """Picard iteration settings."""

    eps_p: float = 0.01
    delta: float = 0.5
    k_max: int = 1000
    tol: float = 1e-6
    newton_tol: float = 1e-9
    newton_max: int = 40

    def __post_init__(self):
        if self.eps_p <= 0:
            raise ValueError("eps_p must be positive")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError("delta must lie in [0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class PdeFields:
    """Density and value tables, one row per time node."""

    M: np.ndarray
    U: np.ndarray

    def row_mass(self, grid: Grid) -> np.ndarray:
        return np.trapezoid(self.M, dx=grid.dx, axis=1)


@dataclass
class ConvergenceLog:
    iterations: list[int] = field(default_factory=list)
    err_u: list[float] = field(default_factory=list)
    err_m: list[float] = field(default_factory=list)
    converged: bool = False

    def append(self, k: int, eu: float, em: float) -> None:
        self.iterations.append(k)
        self.err_u.append(eu)
        self.err_m.append(em)


def gaussian_density(X: float, Sigma: float, grid: Grid) -> np.ndarray:
    """Gaussian density row sampled at the grid nodes.

    Raises :class:`GridDomainError` when the grid captures less than 0.999
    of the mass (support too close to the boundary).
    """
    if Sigma <= 0:
        raise ValueError("Sigma must be positive")
    x = grid.x
    row = np.exp(-((x - X) ** 2) / (2.0 * Sigma**2)) / np.sqrt(2.0 * np.pi * Sigma**2)
    mass = float(np.trapezoid(row, dx=grid.dx))
    if mass < 0.999:
        raise GridDomainError(f"grid holds only {mass:.6f} of the density mass; enlarge L")
    return row


def cost_terms(params: ModelParams, x, m, warn_clamp: bool = True):
    """(interaction cost g m^alpha, external potential -h x^2/2 - x^4/4).

    Negative densities (Picard intermediates may undershoot) are clamped to
    zero; meaningful undershoots trigger a warning unless suppressed (the
    Picard driver aggregates them into one warning per solve).
    """
    m_arr = np.asarray(m, dtype=float)
    if warn_clamp and np.any(m_arr < -1e-10):
        warnings.warn(
            f"density clamped at {float(m_arr.min()):.3e} before cost evaluation",
            RuntimeWarning,
            stacklevel=2,
        )
    m_pos = np.clip(m_arr, 0.0, None)
    x = np.asarray(x, dtype=float)
    f_val = params.g * m_pos**params.alpha
    u0_val = -params.h * x**2 / 2.0 - x**4 / 4.0
    return f_val, u0_val


def _dx_row(Z: np.ndarray, dx: float) -> np.ndarray:
    """First derivative: central interior, one-sided at the two boundaries."""
    out = np.empty_like(Z)
    out[1:-1] = (Z[2:] - Z[:-2]) / (2.0 * dx)
    out[0] = (Z[1] - Z[0]) / dx
    out[-1] = (Z[-1] - Z[-2]) / dx
    return out


def _dxx_row(Z: np.ndarray, dx: float) -> np.ndarray:
    """Second derivative: central interior, one-sided 3-point at boundaries."""
    out = np.empty_like(Z)
    out[1:-1] = (Z[2:] - 2.0 * Z[1:-1] + Z[:-2]) / dx**2
    out[0] = (Z[2] - 2.0 * Z[1] + Z[0]) / dx**2
    out[-1] = (Z[-1] - 2.0 * Z[-2] + Z[-3]) / dx**2
    return out


def _banded_operators(n: int, dx: float):
    """Banded (l=2, u=2) matrices of the derivative stencils.

    Row 0 and row n-1 carry the one-sided closures, which reach two nodes
    in, hence the bandwidth-2 storage everywhere.
    """
    # solve_banded layout: ab[u + i - j, j] = A[i, j]
    dx_b = np.zeros((5, n))
    dxx_b = np.zeros((5, n))
    inv2 = 1.0 / (2.0 * dx)
    invs = 1.0 / dx**2
    # interior central stencils
    dx_b[1, 2:] = inv2  # superdiagonal entries A[i, i+1]
    dx_b[3, : n - 2] = -inv2  # subdiagonal entries A[i, i-1]
    dxx_b[1, 2:] = invs
    dxx_b[2, 1 : n - 1] = -2.0 * invs
    dxx_b[3, : n - 2] = invs
    # boundary rows
    dx_b[2, 0] = -1.0 / dx
    dx_b[1, 1] = 1.0 / dx
    dx_b[2, n - 1] = 1.0 / dx
    dx_b[3, n - 2] = -1.0 / dx
    dxx_b[2, 0] = invs
    dxx_b[1, 1] = -2.0 * invs
    dxx_b[0, 2] = invs
    dxx_b[2, n - 1] = invs
    dxx_b[3, n - 2] = -2.0 * invs
    dxx_b[4, n - 3] = invs
    return dx_b, dxx_b


def hjb_backward_step(
    U_next: np.ndarray,
    M_next: np.ndarray,
    grid: Grid,
    params: ModelParams,
    newton_tol: float = 1e-9,
    newton_max: int = 30,
    warn_clamp: bool = True,
) -> np.ndarray:
    """One backward time step of the discrete value-function equation.

    Solves, for the row U at time level n given the row at n+1,

        -(U_next - U)/dt - sigma^2/2 * Dxx U + (Dx U)^2/(2 mu)
            + f(M_next) + U0(x) = 0

    by damped Newton on a banded Jacobian.  The tolerance applies to the
    residual scaled by (1 + |f + U0|) so the quartic-potential boundary
    rows do not demand impossible absolute accuracy.  Rows with
    under-resolved control layers are reached through a short
    artificial-viscosity continuation; the returned row always satisfies
    the unmodified equation.
    """
    dt, dx = grid.dt, grid.dx
    sig2 = params.sigma**2
    mu = params.mu
    f_val, u0_val = cost_terms(params, grid.x, M_next, warn_clamp=warn_clamp)
    src = f_val + u0_val
    n = U_next.size
    dx_b, dxx_b = _banded_operators(n, dx)

    # Line-search merit: residual scaled by the local source magnitude, so
    # the quartic-potential boundary rows do not dominate the descent test.
    merit_scale = 1.0 + np.abs(src)

    def newton(u_guess, u_prev, step_dt, visc=1.0):
        def residual(u_row):
            du = _dx_row(u_row, dx)
            return (
                du,
                -(u_prev - u_row) / step_dt
                - 0.5 * visc * sig2 * _dxx_row(u_row, dx)
                + du**2 / (2.0 * mu)
                + src,
            )

        U = u_guess.copy()
        scale = max(1.0, float(np.max(np.abs(u_prev))))
        du, res = residual(U)
        # rms merit for the line search; plain max for the convergence test
        norm = lambda v: float(np.sqrt(np.mean(v**2)))
        history = [norm(res)]
        for _ in range(newton_max):
            if float(np.max(np.abs(res))) < newton_tol:
                return U, history
            # Jacobian: I/dt - visc sigma^2/2 Dxx + diag(du/mu) Dx, banded form
            jac = -0.5 * visc * sig2 * dxx_b + _row_scale_banded(dx_b, du / mu)
            jac[2, :] += 1.0 / step_dt
            try:
                step = solve_banded((2, 2), jac, -res)
            except np.linalg.LinAlgError as exc:
                raise NewtonError("singular Jacobian in backward step", history) from exc
            # damped update: backtrack until the rms residual shrinks
            lam, du_new, res_new, r_new = 1.0, du, res, history[-1]
            for _ in range(30):
                du_new, res_new = residual(U + lam * step)
                r_new = norm(res_new)
                if r_new < history[-1]:
                    break
                lam *= 0.5
            U = U + lam * step
            du, res = du_new, res_new
            history.append(r_new)
            if lam * float(np.max(np.abs(step))) < 4.0 * np.finfo(float).eps * scale:
                break  # floating-point floor of this row
        # Quartic-source rows bottom out above the target; accept within the
        # source-scaled equivalent of the tolerance.
        if float(np.max(np.abs(res) / merit_scale)) < 1e2 * newton_tol:
            return U, history
        raise NewtonError(
            f"backward Newton stalled at residual {history[-1]:.3e} after {newton_max} iterations",
            history,
        )

    def solve_step(u_prev, step_dt, depth):
        try:
            return newton(u_prev, u_prev, step_dt)[0]
        except NewtonError:
            if depth >= 3:
                raise
        # rebuild the guess from two half-steps, then solve the full step
        mid = solve_step(u_prev, 0.5 * step_dt, depth + 1)
        guess = solve_step(mid, 0.5 * step_dt, depth + 1)
        try:
            return newton(guess, u_prev, step_dt)[0]
        except NewtonError:
            if depth >= 1:
                raise
            # last resort: walk in from an artificially thickened layer
            for visc in (8.0, 4.0, 2.0, 1.4, 1.15, 1.0):
                guess, _ = newton(guess, u_prev, step_dt, visc=visc)
            return guess

    return solve_step(U_next, dt, 0)


def _row_scale_banded(ab: np.ndarray, c: np.ndarray) -> np.ndarray:
    """diag(c) @ A for a banded matrix in solve_banded layout.

    Entry ab[k, j] holds A[i, j] with i = j + k - u, so each stored
    diagonal picks up the factor c shifted by its offset.
    """
    out = np.zeros_like(ab)
    n = ab.shape[1]
    u = 2
    for k in range(ab.shape[0]):
        off = k - u  # i - j
        j0, j1 = max(0, -off), min(n, n - off)
        out[k, j0:j1] = ab[k, j0:j1] * c[j0 + off : j1 + off]
    return out


def fp_forward_step(M: np.ndarray, U: np.ndarray, grid: Grid, params: ModelParams) -> np.ndarray:
    """One forward time step of the discrete density equation.

    Assembles the banded transport-diffusion matrix with the value-function
    derivatives frozen at the current time level and solves
    ``A M_next = M / dt`` directly.
    """
    dt, dx = grid.dt, grid.dx
    sig2 = params.sigma**2
    mu = params.mu
    n = M.size
    du = _dx_row(U, dx)
    ddu = _dxx_row(U, dx)

    ab = np.zeros((5, n))
    # interior rows: diagonal, sub, super
    ab[2, :] = 1.0 / dt + sig2 / dx**2 - ddu / mu
    sub = -0.5 * sig2 / dx**2 + du / (2.0 * mu * dx)
    sup = -0.5 * sig2 / dx**2 - du / (2.0 * mu * dx)
    ab[1, 1:] = sup[:-1]  # A[i, i+1]
    ab[3, :-1] = sub[1:]  # A[i, i-1]
    # boundary rows: one-sided first and second differences
    ab[2, 0] = 1.0 / dt - 0.5 * sig2 / dx**2 + du[0] / (mu * dx) - ddu[0] / mu
    ab[1, 1] = sig2 / dx**2 - du[0] / (mu * dx)
    ab[0, 2] = -0.5 * sig2 / dx**2
    ab[2, n - 1] = 1.0 / dt - 0.5 * sig2 / dx**2 - du[-1] / (mu * dx) - ddu[-1] / mu
    ab[3, n - 2] = sig2 / dx**2 + du[-1] / (mu * dx)
    ab[4, n - 3] = -0.5 * sig2 / dx**2
    try:
        return solve_banded((2, 2), ab, M / dt)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("zero pivot in forward density solve") from exc


def _hjb_sweep(M_table, grid, params, config, m_FC, penalty_cap=None):
    """Backward sweep: penalty row at the final time, Newton steps down to 0."""
    U = np.empty_like(M_table)
    U[-1] = (M_table[-1] - m_FC) / config.eps_p
    if penalty_cap is not None:
        np.clip(U[-1], -penalty_cap, penalty_cap, out=U[-1])
    for n in range(grid.Nt - 1, -1, -1):
        U[n] = hjb_backward_step(
            U[n + 1], M_table[n + 1], grid, params, config.newton_tol, config.newton_max,
            warn_clamp=False,
        )
    return U


def _fp_sweep(U_table, grid, params, m_IC):
    M = np.empty_like(U_table)
    M[0] = m_IC
    for n in range(grid.Nt):
        M[n + 1] = fp_forward_step(M[n], U_table[n], grid, params)
    return M


def picard_solve(
    params: ModelParams,
    m_IC: np.ndarray,
    m_FC: np.ndarray,
    grid: Grid,
    config: PdeConfig,
    m_init: np.ndarray | None = None,
    u_init: np.ndarray | None = None,
    _penalty_cap: float | None = None,
) -> tuple[PdeFields, ConvergenceLog]:
    """Damped Picard iteration over backward and forward sweeps.

    Default initial guesses: the density table interpolates linearly in
    time between the prescribed endpoint rows and the value table is zero.
    Non-convergence within ``k_max`` returns the last fields with the log's
    ``converged`` flag unset (it is a status, not an exception).
    """
    m_IC = np.asarray(m_IC, dtype=float)
    m_FC = np.asarray(m_FC, dtype=float)
    shape = (grid.Nt + 1, grid.Nx + 1)
    if m_IC.shape != (grid.Nx + 1,) or m_FC.shape != (grid.Nx + 1,):
        raise ValueError("endpoint rows must match the grid")
    if m_init is None:
        w = np.linspace(0.0, 1.0, grid.Nt + 1)[:, None]
        M_t = (1.0 - w) * m_IC[None, :] + w * m_FC[None, :]
    else:
        M_t = np.array(m_init, dtype=float)
        if M_t.shape != shape:
            raise ValueError("m_init must have shape (Nt+1, Nx+1)")
    U_t = np.zeros(shape) if u_init is None else np.array(u_init, dtype=float)

    log = ConvergenceLog()
    delta = config.delta
    worst_dip = 0.0
    for k in range(config.k_max):
        U_new = _hjb_sweep(M_t, grid, params, config, m_FC, penalty_cap=_penalty_cap)
        M_new = _fp_sweep(U_new, grid, params, m_IC)
        U_damped = delta * U_t + (1.0 - delta) * U_new
        M_damped = delta * M_t + (1.0 - delta) * M_new
        err_u = float(np.max(np.abs(U_damped - U_t)))
        err_m = float(np.max(np.abs(M_damped - M_t)))
        U_t, M_t = U_damped, M_damped
        worst_dip = min(worst_dip, float(M_t.min()))
        log.append(k, err_u, err_m)
        if err_u < config.tol and err_m < config.tol:
            log.converged = True
            break
    fields = PdeFields(M=M_t, U=U_t)
    if worst_dip < -1e-10:
        warnings.warn(
            f"density iterates dipped to {worst_dip:.3e} (clamped in cost terms); "
            f"final table minimum is {float(M_t.min()):.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return fields, log


def planning_solve(
    params: ModelParams,
    m_IC: np.ndarray,
    m_FC: np.ndarray,
    grid: Grid,
    config: PdeConfig,
    m_init: np.ndarray | None = None,
    u_init: np.ndarray | None = None,
    warmup_delta: float = 0.8,
    warmup_k: int = 400,
) -> tuple[PdeFields, ConvergenceLog]:
    """Damping-continuation driver around :func:`picard_solve`.

    Cold starts at moderate damping whip the final value row into
    needle-sharp profiles that the backward Newton cannot absorb; a heavier
    damped warm-up stage walks safely into the fixed point's basin, after
    which the exactly configured iteration runs to convergence and its log
    is returned.  The warm-up is skipped when it would damp less than the
    target configuration.
    """
    M_cur, U_cur = m_init, u_init
    if warmup_delta > config.delta:
        stage = PdeConfig(
            eps_p=config.eps_p,
            delta=warmup_delta,
            k_max=warmup_k,
            tol=config.tol,
            newton_tol=config.newton_tol,
            newton_max=config.newton_max,
        )
        fields, _ = picard_solve(params, m_IC, m_FC, grid, stage, m_init=M_cur, u_init=U_cur)
        M_cur, U_cur = fields.M, fields.U
    return picard_solve(params, m_IC, m_FC, grid, config, m_init=M_cur, u_init=U_cur)


def ansatz_tables(grid: Grid, params: ModelParams, lagr_rows: np.ndarray, with_value: bool = True):
    """Warm-start density (and optionally value) tables from a moment path.

    ``lagr_rows`` holds one (X, S, P, Lambda) row per grid time node.  The
    density rows are the matching Gaussians; the value rows invert the
    log-transform of the Gaussian pair (additive gauge fixed to zero).
    """
    if lagr_rows.shape != (grid.Nt + 1, 4):
        raise ValueError("lagr_rows must have one row per time node")
    musig2 = params.mu * params.sigma**2
    x = grid.x
    M = np.empty((grid.Nt + 1, grid.Nx + 1))
    U = np.zeros_like(M)
    for n, (X, S, P, Lam) in enumerate(lagr_rows):
        var = (params.epsilon * S) ** 2
        M[n] = np.exp(-((x - X) ** 2) / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)
        if with_value:
            U[n] = (
                -P * x
                + (x - X) ** 2 * (1.0 - Lam / musig2) * musig2 / (4.0 * var)
                + 0.25 * musig2 * np.log(2.0 * np.pi * var)
            )
    return (M, U) if with_value else (M, None)


def extract_moments(fields: PdeFields, grid: Grid, params: ModelParams):
    """Phase-space trajectory of the density/value tables.

    Per time row: mean and scaled deviation from the density moments, then
    the momenta from the log-transformed pair (the value function enters
    through Phi = exp(-u / (mu sigma^2)), gauge-centered per row for
    numerical range).  Returns (lagrangian_rows, phase_rows), each with one
    row per time node.
    """
    musig2 = params.mu * params.sigma**2
    x, dx = grid.x, grid.dx
    n_rows = fields.M.shape[0]
    lagr = np.empty((n_rows, 4))
    for i in range(n_rows):
        m = np.clip(fields.M[i], 0.0, None)
        u = fields.U[i]
        X = float(np.trapezoid(x * m, dx=dx))
        var = float(np.trapezoid(x**2 * m, dx=dx)) - X**2
        if var <= 0.0:
            raise DegenerateDensityError(f"nonpositive variance at time index {i}")
        S = np.sqrt(var) / params.epsilon
        # Cole-Hopf pair; the additive gauge of u is free, so center it
        # before exponentiating to keep the factors in range.
        u_c = u - float(np.median(u))
        phi = np.exp(-u_c / musig2)
        gamma = m / phi
        dgam = _dx_row(gamma, dx)
        P = float(np.trapezoid(-musig2 * phi * dgam, dx=dx))
        Lam = (
            float(np.trapezoid(-musig2 * phi * (2.0 * x * dgam + gamma), dx=dx))
            - 2.0 * X * P
        )
        lagr[i] = (X, S, P, Lam)
    phase = lagrangian_to_phase(lagr)
    return lagr, phase


def phase_rotation_count(times, phase_rows, q1_window: float) -> int:
    """p2 = 0 crossings of a sampled phase path inside the |q1| window."""
    q1 = phase_rows[:, 0]
    p2 = phase_rows[:, 3]
    count = 0
    for i in range(len(times) - 1):
        a, b = p2[i], p2[i + 1]
        if a == 0.0:
            continue
        if a * b < 0.0:
            frac = a / (a - b)
            q1_star = q1[i] + frac * (q1[i + 1] - q1[i])
            if abs(q1_star) <= q1_window:
                count += 1
        elif b == 0.0 and abs(q1[i + 1]) <= q1_window:
            count += 1
    return count


def compare_topology(times, phase_rows, bvp_solution, eq, q1_window: float = 0.5) -> dict:
    """Crossing-count comparison between an extracted path and a BVP solution."""
    from .bvp import rotation_count

    n_pde = phase_rotation_count(times, phase_rows, q1_window)
    n_bvp = rotation_count(bvp_solution, eq, q1_window)
    return {"n_pde": n_pde, "n_bvp": n_bvp, "match": n_pde == n_bvp}
