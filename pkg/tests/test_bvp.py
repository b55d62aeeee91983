import numpy as np
import pytest

from mfgtubes.bvp import (
    BoundaryConditions,
    StepPolicy,
    annotate_topology,
    ballistic_guess,
    bifurcation_diagram,
    continue_branch,
    max_defect,
    phase_decomposition,
    rotation_count,
    solve_bvp,
    straight_line_guess,
    symmetric_transit_seeds,
)
from mfgtubes.errors import InfeasibleGuessError

TRANSIT_BC = BoundaryConditions(-10.0, 4.5, 10.0, 4.5)


@pytest.fixture(scope="module")
def oscillation_solution(sc_params, sc_equilibrium):
    """In-plane deviation oscillation: a clean nontrivial solved BVP."""
    q2_eq = sc_equilibrium.q2
    bc = BoundaryConditions(0.0, q2_eq + 0.4, 0.0, q2_eq + 0.4)
    T = 0.9
    ts = np.linspace(0.0, T, 161)
    q2 = q2_eq + 0.4 * np.cos(2 * np.pi * ts / T)
    p2 = 0.4 * 2 * np.pi / T * np.sin(2 * np.pi * ts / T) * sc_params.epsilon**2 * sc_params.mu * -1.0
    ys = np.column_stack([np.zeros_like(ts), np.zeros_like(ts), q2, -p2])
    return solve_bvp(sc_params, bc, T, guess=(ts, ys), tol=1e-9), bc


@pytest.fixture(scope="module")
def transit_seed(sc_params, sc_equilibrium):
    seeds = symmetric_transit_seeds(
        sc_params, TRANSIT_BC, sc_equilibrium.energy + 1e4, n_scan=160, q2_span=(2.0, 6.0)
    )
    assert seeds, "no certified transit solution at the ballistic energy"
    return seeds[0]


class TestBoundaryConditions:
    def test_rejects_nonpositive_deviation(self):
        with pytest.raises(ValueError):
            BoundaryConditions(-10.0, 0.0, 10.0, 4.5)


class TestSolveBvp:
    def test_degenerate_equilibrium_bc(self, sc_params, sc_equilibrium):
        q2_eq = sc_equilibrium.q2
        bc = BoundaryConditions(0.0, q2_eq, 0.0, q2_eq)
        sol = solve_bvp(sc_params, bc, 3.0, tol=1e-9)
        assert np.max(np.abs(sol.states - sc_equilibrium.state)) < 1e-8
        assert sol.energy == pytest.approx(sc_equilibrium.energy, rel=1e-10)

    def test_oscillation_contract(self, oscillation_solution, sc_params):
        sol, bc = oscillation_solution
        assert sol.boundary_residual() < 1e-9
        profile = sol.energy_profile()
        assert np.max(np.abs(profile - sol.energy)) / abs(sol.energy) < 1e-6
        assert sol.residual < 1e-5
        # stays in the invariant plane
        assert np.max(np.abs(sol.states[:, 0])) < 1e-9

    def test_infeasible_guess_rejected(self, sc_params):
        ts = np.linspace(0.0, 1.0, 11)
        ys = np.column_stack([np.zeros(11), np.zeros(11), np.linspace(1.0, -1.0, 11), np.zeros(11)])
        with pytest.raises(InfeasibleGuessError):
            solve_bvp(sc_params, TRANSIT_BC, 1.0, guess=(ts, ys))

    def test_guess_sources(self, sc_params):
        ts, ys = straight_line_guess(sc_params, TRANSIT_BC, 2.0)
        assert ys[0, 0] == -10.0 and ys[-1, 0] == 10.0
        ts, ys = ballistic_guess(sc_params, TRANSIT_BC, 2.0)
        assert ys[0, 0] == pytest.approx(-10.0) and ys[-1, 0] == pytest.approx(10.0)
        # ballistic guesses carry the transit momentum scale
        assert np.max(np.abs(ys[:, 1])) > 50.0

    def test_defect_convergence_fourth_order(self, oscillation_solution, sc_params):
        # halving the mesh spacing of a fixed solution divides the defect by
        # at least 8 (4th-order collocation)
        sol, bc = oscillation_solution
        defects = {}
        for n_nodes in (101, 201):
            ts = np.linspace(0.0, sol.T, n_nodes)
            ys = sol.state_at(ts)
            re_solved = solve_bvp(sc_params, bc, sol.T, guess=(ts, ys), tol=0.1)
            assert re_solved.mesh.size == n_nodes  # loose tol: no refinement
            defects[n_nodes] = max_defect(re_solved)
        assert defects[101] / defects[201] >= 8.0


class TestTransitFamily:
    def test_certified_seed_quality(self, transit_seed, sc_equilibrium):
        sol = transit_seed
        assert sol.boundary_residual() < 1e-9
        assert np.max(np.abs(sol.energy_profile() - sol.energy)) / abs(sol.energy) < 1e-6
        assert rotation_count(sol, sc_equilibrium) == 1

    def test_symmetry_of_symmetric_solution(self, transit_seed):
        # q1(T - t) = -q1(t), q2(T - t) = q2(t) for the mirror-symmetric bc
        sol = transit_seed
        ts = np.linspace(0.0, sol.T, 401)
        fwd = sol.state_at(ts)
        bwd = sol.state_at(sol.T - ts)
        scale = np.max(np.abs(fwd[:, 0]))
        assert np.max(np.abs(fwd[:, 0] + bwd[:, 0])) < 1e-6 * scale
        assert np.max(np.abs(fwd[:, 2] - bwd[:, 2])) < 1e-6 * np.max(np.abs(fwd[:, 2]))

    def test_phase_decomposition_sums_to_horizon(self, transit_seed, sc_equilibrium):
        t_a, tau_erg, t_d = phase_decomposition(transit_seed, sc_equilibrium)
        assert t_a + tau_erg + t_d == pytest.approx(transit_seed.T, abs=1e-12)
        assert t_a > 0 and t_d > 0 and tau_erg > 0

    def test_continuation_guards_topology_and_energy_trend(self, sc_params, sc_equilibrium, transit_seed):
        branch = continue_branch(
            sc_params,
            TRANSIT_BC,
            transit_seed,
            (transit_seed.T - 0.03, transit_seed.T + 0.03),
            policy=StepPolicy(dT=0.01, dT_min=1e-3, dT_max=0.01),
            eq=sc_equilibrium,
            label="B1",
        )
        assert len(branch.solutions) >= 4
        assert branch.topology == 1
        assert all(s.rotations == 1 for s in branch.solutions)
        energies = [s.energy for s in branch.solutions]  # sorted by T
        assert all(a > b for a, b in zip(energies, energies[1:]))
        rows = bifurcation_diagram([branch])
        assert [r[0] for r in rows] == ["B1"] * len(rows)
        assert all(rows[i][1] < rows[i + 1][1] for i in range(len(rows) - 1))


class TestTopologyOnEquilibriumPath:
    def test_constant_solution_counts(self, sc_params, sc_equilibrium):
        q2_eq = sc_equilibrium.q2
        bc = BoundaryConditions(0.0, q2_eq, 0.0, q2_eq)
        sol = solve_bvp(sc_params, bc, 2.0, tol=1e-9)
        annotate_topology(sol, sc_equilibrium)
        assert sol.rotations == 0
        t_a, tau_erg, t_d = sol.phases
        assert t_a == 0.0 and t_d == pytest.approx(0.0, abs=1e-9)
        assert tau_erg == pytest.approx(sol.T, abs=1e-9)
