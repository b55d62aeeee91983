import math

import numpy as np
import pytest

from mfgtubes.errors import DomainError
from mfgtubes.model import (
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

# Frozen regression constants, computed once by the independent term-by-term
# oracle below (40-digit arithmetic; see test_potential_oracle_agreement).
V_SC_AT_3_81 = -2.297748903057759688
V_SS_AT_12_21 = 0.14919642262937763202
E_IPOT_SC_AT_3_81 = 4.5921415003202594643


def oracle_potential(params, q1, q2):
    """Independent evaluation of the six potential terms."""
    s = params.epsilon * q2
    coeff = params.g / (
        (params.alpha + 1.0) ** 1.5 * (2.0 * math.pi) ** (params.alpha / 2.0)
    )
    terms = [
        -params.h * q1**2 / 2.0,
        -(q1**4) / 4.0,
        -0.5 * s**2 * (params.h + 3.0 * q1**2),
        -params.mu * params.sigma**4 / (8.0 * s**2),
        coeff * s ** (-params.alpha),
        -0.75 * s**4,
    ]
    return math.fsum(terms)


def random_states(rng, n, q2_lo=0.5, q2_hi=20.0):
    states = rng.normal(size=(n, 4)) * np.array([3.0, 5.0, 0.0, 0.5])
    states[:, 2] = rng.uniform(q2_lo, q2_hi, size=n)
    return states


class TestParams:
    def test_valid(self, sc_params):
        assert sc_params.epsilon == 0.05

    @pytest.mark.parametrize(
        "field,value",
        [("sigma", 0.0), ("mu", -1.0), ("g", 0.0), ("alpha", 0.0), ("epsilon", 1.0), ("h", -0.1)],
    )
    def test_invalid(self, field, value):
        kwargs = dict(sigma=1.0, mu=2.0, g=4.0, h=0.0, alpha=3.0, epsilon=0.05)
        kwargs[field] = value
        with pytest.raises(DomainError):
            ModelParams(**kwargs)


class TestPotential:
    def test_even_in_q1(self, sc_params):
        assert potential_energy(sc_params, 2.0, 5.0) == pytest.approx(
            potential_energy(sc_params, -2.0, 5.0), rel=1e-15
        )

    def test_golden_sc(self, sc_params):
        assert potential_energy(sc_params, 0.0, 3.81) == pytest.approx(V_SC_AT_3_81, rel=1e-13)

    def test_golden_ss(self, ss_params):
        assert potential_energy(ss_params, 0.0, 12.21) == pytest.approx(V_SS_AT_12_21, rel=1e-13)

    def test_potential_oracle_agreement(self, sc_params, ss_params, rng):
        for params in (sc_params, ss_params):
            for _ in range(50):
                q1 = rng.normal() * 5.0
                q2 = rng.uniform(0.5, 30.0)
                assert potential_energy(params, q1, q2) == pytest.approx(
                    oracle_potential(params, q1, q2), rel=1e-12
                )

    def test_domain_error(self, sc_params):
        with pytest.raises(DomainError):
            potential_energy(sc_params, 0.0, -1.0)


class TestEnergy:
    def test_zero_momenta_reduce_to_potential(self, sc_params):
        state = np.array([1.3, 0.0, 6.1, 0.0])
        assert energy(sc_params, state) == pytest.approx(
            potential_energy(sc_params, 1.3, 6.1), rel=1e-15
        )

    def test_equilibrium_energy_is_potential(self, sc_params, sc_equilibrium):
        assert sc_equilibrium.energy == pytest.approx(
            potential_energy(sc_params, 0.0, sc_equilibrium.q2), rel=1e-14
        )

    def test_mean_momentum_adds_quarter(self, sc_params, sc_equilibrium):
        state = sc_equilibrium.state.copy()
        state[1] = 1.0
        assert energy(sc_params, state) - sc_equilibrium.energy == pytest.approx(0.25, abs=1e-12)

    def test_hamiltonian_sign(self, sc_params, rng):
        state = random_states(rng, 1)[0]
        assert hamiltonian(sc_params, state) == pytest.approx(-energy(sc_params, state))


class TestVectorField:
    def test_equilibrium_near_3_81_is_fixed_point(self, sc_params, sc_equilibrium):
        assert sc_equilibrium.q2 == pytest.approx(3.81, abs=0.01)
        assert np.max(np.abs(vector_field(sc_params, sc_equilibrium.state))) < 1e-10

    def test_invariant_plane(self, sc_params, rng):
        for _ in range(20):
            state = np.array([0.0, 0.0, rng.uniform(1.0, 10.0), rng.normal() * 0.2])
            field = vector_field(sc_params, state)
            assert field[0] == 0.0
            assert field[1] == 0.0

    def test_hand_evaluated_mean_force(self, sc_params):
        state = np.array([1.0, 0.0, 3.81, 0.0])
        expected = -1.0 - 3.0 * (0.05 * 3.81) ** 2
        assert vector_field(sc_params, state)[1] == pytest.approx(expected, rel=1e-14)

    def test_momentum_rate_is_potential_gradient(self, sc_params, rng):
        # dp/dt = +dV/dq under the H = -E sign convention
        for state in random_states(rng, 30):
            field = vector_field(sc_params, state)
            d = 1e-6
            dv_dq1 = (
                potential_energy(sc_params, state[0] + d, state[2])
                - potential_energy(sc_params, state[0] - d, state[2])
            ) / (2 * d)
            dv_dq2 = (
                potential_energy(sc_params, state[0], state[2] + d)
                - potential_energy(sc_params, state[0], state[2] - d)
            ) / (2 * d)
            assert field[1] == pytest.approx(dv_dq1, abs=2e-5)
            assert field[3] == pytest.approx(dv_dq2, abs=2e-5)

    def test_symplectic_gradient_consistency(self, sc_params, rng):
        # (q1dot, q2dot) = (dH/dp1, dH/dp2) by central differences
        for state in random_states(rng, 100):
            field = vector_field(sc_params, state)
            d = 1e-6
            for qdot_idx, p_idx in ((0, 1), (2, 3)):
                sp = state.copy()
                sp[p_idx] += d
                sm = state.copy()
                sm[p_idx] -= d
                dh_dp = (hamiltonian(sc_params, sp) - hamiltonian(sc_params, sm)) / (2 * d)
                assert field[qdot_idx] == pytest.approx(dh_dp, abs=1e-5)

    def test_parity_equivariance(self, sc_params, rng):
        for state in random_states(rng, 20):
            flipped = state * np.array([-1.0, -1.0, 1.0, 1.0])
            f = vector_field(sc_params, state)
            g = vector_field(sc_params, flipped)
            assert np.allclose(f * np.array([-1.0, -1.0, 1.0, 1.0]), g, atol=1e-13)


class TestJacobian:
    def test_paper_entries_at_sc_equilibrium(self, sc_params, sc_equilibrium):
        jac = state_jacobian(sc_params, sc_equilibrium.state)
        assert jac[0, 1] == pytest.approx(-0.5, rel=1e-12)
        assert jac[1, 0] == pytest.approx(-0.109, rel=0.01)
        assert jac[2, 3] == pytest.approx(-200.0, rel=1e-12)
        assert jac[3, 2] == pytest.approx(0.946, rel=0.01)

    def test_matches_finite_differences(self, sc_params, rng):
        d = 1e-6
        for state in random_states(rng, 25):
            jac = state_jacobian(sc_params, state)
            fd = np.empty((4, 4))
            for j in range(4):
                dv = np.zeros(4)
                dv[j] = d
                fd[:, j] = (
                    vector_field(sc_params, state + dv) - vector_field(sc_params, state - dv)
                ) / (2 * d)
            assert np.max(np.abs(jac - fd)) < 1e-5

    def test_traceless(self, sc_params, rng):
        for state in random_states(rng, 10):
            assert abs(np.trace(state_jacobian(sc_params, state))) < 1e-14


class TestLegendreMaps:
    def test_zero_momenta(self):
        assert np.allclose(
            lagrangian_to_phase(np.array([-10.0, 4.5, 0.0, 0.0])), [-10.0, 0.0, 4.5, 0.0]
        )

    def test_hand_substitution(self):
        assert np.allclose(lagrangian_to_phase(np.array([1.0, 2.0, 3.0, 4.0])), [1.0, -3.0, 2.0, -1.0])

    def test_round_trip(self, rng):
        lagr = rng.normal(size=(1000, 4)) * np.array([5.0, 0.0, 10.0, 3.0])
        lagr[:, 1] = rng.uniform(0.3, 20.0, size=1000)
        back = phase_to_lagrangian(lagrangian_to_phase(lagr))
        assert np.max(np.abs(back - lagr)) < 1e-12

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            lagrangian_to_phase(np.array([0.0, -1.0, 0.0, 0.0]))
        with pytest.raises(DomainError):
            phase_to_lagrangian(np.array([0.0, 0.0, -1.0, 0.0]))


class TestReducedLagrangian:
    def test_zero_velocity_reduction(self, sc_params):
        lagr = np.array([2.0, 5.0, 0.0, 0.0])
        h_val = hamiltonian(sc_params, lagrangian_to_phase(lagr))
        assert h_val == pytest.approx(-reduced_lagrangian(sc_params, lagr), rel=1e-12)

    def test_legendre_identity(self, sc_params, rng):
        # H = -P Xdot - Lambda Sdot / (2S) - L with velocities from the momenta
        for _ in range(200):
            X, S = rng.normal() * 8.0, rng.uniform(0.5, 15.0)
            P, Lam = rng.normal() * 5.0, rng.normal() * 3.0
            lagr = np.array([X, S, P, Lam])
            xdot = P / sc_params.mu
            sdot = Lam / (2.0 * sc_params.mu * sc_params.epsilon**2 * S)
            lhs = hamiltonian(sc_params, lagrangian_to_phase(lagr))
            rhs = -P * xdot - Lam * sdot / (2.0 * S) - reduced_lagrangian(sc_params, lagr)
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_interaction_term_oracle(self, sc_params):
        comp = energy_components(sc_params, np.array([0.0, 3.81, 0.0, 0.0]))
        assert comp.e_ipot == pytest.approx(E_IPOT_SC_AT_3_81, rel=1e-13)

    def test_breakdown_total_is_energy(self, sc_params, rng):
        for _ in range(50):
            lagr = np.array(
                [rng.normal() * 8.0, rng.uniform(0.5, 15.0), rng.normal() * 5.0, rng.normal() * 3.0]
            )
            comp = energy_components(sc_params, lagr)
            assert isinstance(comp, EnergyBreakdown)
            assert comp.e_tot == pytest.approx(
                energy(sc_params, lagrangian_to_phase(lagr)), rel=1e-11, abs=1e-11
            )
