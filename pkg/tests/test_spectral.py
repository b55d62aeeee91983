import numpy as np
import pytest

from mfgtubes.errors import DomainError
from mfgtubes.model import energy, hamiltonian, state_jacobian, vector_field
from mfgtubes.spectral import (
    EquilibriumKind,
    TransitClass,
    classify_equilibrium,
    eigen_basis,
    find_equilibria,
    from_eigen_coords,
    linear_energy,
    linear_flow,
    region_spec,
    sphere_point,
    to_eigen_coords,
    transit_classify,
)


class TestFindEquilibria:
    def test_ss_location(self, ss_equilibrium):
        assert ss_equilibrium.q2 == pytest.approx(12.21, abs=0.01)
        assert ss_equilibrium.kind is EquilibriumKind.SADDLE_SADDLE

    def test_sc_location(self, sc_equilibrium):
        assert sc_equilibrium.q2 == pytest.approx(3.81, abs=0.01)
        assert sc_equilibrium.kind is EquilibriumKind.SADDLE_CENTER

    def test_second_root_for_sc_params(self, sc_params):
        # the scan oracle finds the outer equilibrium near 14, not the
        # troubled literature value of ~100
        eqs = find_equilibria(sc_params, (5.0, 200.0))
        assert len(eqs) == 1
        assert eqs[0].q2 == pytest.approx(14.0765, abs=0.01)
        assert eqs[0].kind is EquilibriumKind.SADDLE_SADDLE

    def test_empty_range(self, sc_params):
        assert find_equilibria(sc_params, (50.0, 60.0)) == []

    def test_rejects_bad_range(self, sc_params):
        with pytest.raises(DomainError):
            find_equilibria(sc_params, (-1.0, 5.0))

    def test_fixed_point_residual(self, sc_params, sc_equilibrium):
        assert np.max(np.abs(vector_field(sc_params, sc_equilibrium.state))) < 1e-10


class TestClassify:
    def test_sc_paper_values(self, sc_equilibrium):
        a, b, c, d = sc_equilibrium.abcd
        assert a == pytest.approx(0.5, rel=1e-12)
        assert b == pytest.approx(0.109, rel=0.01)
        assert c == pytest.approx(200.0, rel=1e-12)
        assert d == pytest.approx(0.946, rel=0.01)
        lam, nu = sc_equilibrium.rates
        assert lam == pytest.approx(0.233, abs=0.002)
        assert nu == pytest.approx(13.8, abs=0.1)

    def test_ss_paper_values(self, ss_equilibrium):
        a, b, _, _ = ss_equilibrium.abcd
        assert a == pytest.approx(0.5, rel=1e-12)
        assert b == pytest.approx(1.1186, rel=0.01)

    def test_kind_switches_with_alpha(self, sc_equilibrium, ss_equilibrium):
        assert sc_equilibrium.kind is EquilibriumKind.SADDLE_CENTER
        assert ss_equilibrium.kind is EquilibriumKind.SADDLE_SADDLE

    def test_rejects_non_equilibrium(self, sc_params):
        with pytest.raises(ValueError):
            classify_equilibrium(sc_params, np.array([0.0, 0.0, 5.0, 0.0]))

    def test_jacobian_eigenvalues_match_rates(self, sc_params, sc_equilibrium):
        vals = np.linalg.eigvals(state_jacobian(sc_params, sc_equilibrium.state))
        lam, nu = sc_equilibrium.rates
        real = sorted(v.real for v in vals if abs(v.imag) < 1e-9)
        imag = sorted(v.imag for v in vals if abs(v.imag) >= 1e-9)
        assert real == pytest.approx([-lam, lam], rel=1e-9)
        assert imag == pytest.approx([-nu, nu], rel=1e-9)


class TestEigenBasis:
    def test_q1_row_coefficient(self, sc_basis):
        assert sc_basis.T[0, 0] == pytest.approx(0.906, abs=0.002)
        assert sc_basis.T[0, 1] == pytest.approx(sc_basis.T[0, 0], rel=1e-14)

    def test_inverse(self, sc_basis):
        assert np.max(np.abs(sc_basis.T @ sc_basis.T_inv - np.eye(4))) < 1e-12

    def test_energy_coefficients_oracle(self, sc_equilibrium, sc_basis):
        a, b, c, d = sc_equilibrium.abcd
        assert sc_basis.a1 == pytest.approx(2 * a * b / (a + b), rel=1e-13)
        assert sc_basis.a2 == pytest.approx(0.5 * c * d / (c + d), rel=1e-13)
        # paper-quoted arithmetic
        assert sc_basis.a1 == pytest.approx(2 * 0.5 * 0.109 / 0.609, rel=0.01)
        assert sc_basis.a2 == pytest.approx(0.5 * 200 * 0.946 / 200.946, rel=0.01)

    def test_ss_basis_diagonalizes(self, ss_params, ss_equilibrium):
        basis = eigen_basis(ss_equilibrium)
        jac = state_jacobian(ss_params, ss_equilibrium.state)
        D = basis.T_inv @ jac @ basis.T
        g1, g2 = ss_equilibrium.rates
        assert np.allclose(D, np.diag([g1, -g1, g2, -g2]), atol=1e-10)


class TestEigenCoords:
    def test_equilibrium_maps_to_origin(self, sc_equilibrium, sc_basis):
        y = to_eigen_coords(sc_basis, sc_equilibrium, sc_equilibrium.state)
        assert np.max(np.abs(y)) < 1e-14

    def test_basis_column_image(self, sc_equilibrium, sc_basis):
        state = sc_equilibrium.state + sc_basis.T[:, 0]
        y = to_eigen_coords(sc_basis, sc_equilibrium, state)
        assert y == pytest.approx([1.0, 0.0, 0.0, 0.0], abs=1e-12)

    def test_round_trip(self, sc_equilibrium, sc_basis, rng):
        states = sc_equilibrium.state + rng.normal(size=(1000, 4))
        back = from_eigen_coords(sc_basis, sc_equilibrium, to_eigen_coords(sc_basis, sc_equilibrium, states))
        assert np.max(np.abs(back - states)) < 1e-12


class TestLinearEnergy:
    def test_origin(self, sc_basis):
        assert linear_energy(sc_basis, np.zeros(4)) == 0.0

    def test_rho_star_definition(self, sc_basis):
        reg = region_spec(sc_basis, 1e-4)
        y = np.array([0.0, 0.0, reg.rho_star, 0.0])
        assert linear_energy(sc_basis, y) == pytest.approx(1e-4, rel=1e-12)

    def test_matches_quadratic_hamiltonian(self, sc_params, sc_equilibrium, sc_basis, rng):
        # change of variables back to phase coordinates, against the
        # quadratic Hamiltonian H_l = (b q1^2 - a p1^2 - d q2^2 - c p2^2)/2
        a, b, c, d = sc_equilibrium.abcd
        for _ in range(50):
            y = rng.normal(size=4) * 0.01
            z = sc_basis.T @ y
            h_l = 0.5 * (b * z[0] ** 2 - a * z[1] ** 2 - d * z[2] ** 2 - c * z[3] ** 2)
            assert linear_energy(sc_basis, y) == pytest.approx(-h_l, rel=1e-10, abs=1e-16)

    def test_second_order_expansion_of_full_energy(self, sc_params, sc_equilibrium, sc_basis, rng):
        e0 = sc_equilibrium.energy
        for _ in range(20):
            y = rng.normal(size=4) * 1e-4
            state = from_eigen_coords(sc_basis, sc_equilibrium, y)
            de = energy(sc_params, state) - e0
            assert de == pytest.approx(linear_energy(sc_basis, y), rel=5e-3, abs=1e-12)


class TestLinearFlow:
    def test_identity_at_zero(self, sc_equilibrium):
        y0 = np.array([0.3, -0.2, 0.1, 0.4])
        assert np.allclose(linear_flow(sc_equilibrium.rates, y0, 0.0), y0)

    def test_invariants(self, sc_equilibrium, rng):
        y0 = rng.normal(size=4)
        for t in (0.1, 0.7, 2.0):
            y = linear_flow(sc_equilibrium.rates, y0, t)
            assert y[0] * y[1] == pytest.approx(y0[0] * y0[1], rel=1e-12)
            assert y[2] ** 2 + y[3] ** 2 == pytest.approx(y0[2] ** 2 + y0[3] ** 2, rel=1e-12)

    def test_full_rotation_returns(self, sc_equilibrium):
        lam, nu = sc_equilibrium.rates
        y0 = np.array([0.0, 0.0, 0.3, -0.7])
        y = linear_flow((lam, nu), y0, 2 * np.pi / nu)
        assert np.allclose(y, y0, atol=1e-12)


class TestTransitClassify:
    @pytest.mark.parametrize(
        "coords,expected",
        [
            ((1.0, -1.0, 0.0, 0.0), TransitClass.TRANSIT),
            ((1.0, 1.0, 0.0, 0.0), TransitClass.NON_TRANSIT),
            ((0.5, 0.0, 0.1, 0.0), TransitClass.ASYMPTOTIC),
        ],
    )
    def test_classes(self, coords, expected):
        assert transit_classify(np.array(coords), tol=1e-12) is expected

    def test_sphere_and_hyperbola_pictures_agree(self, sc_basis, rng):
        # rho < rho* and zeta*eta < 0 are the same condition on the shell
        reg = region_spec(sc_basis, 1e-4)
        for _ in range(1000):
            rho = rng.uniform(0.0, 1.4) * reg.rho_star
            if abs(rho - reg.rho_star) < 1e-6:
                continue
            theta = rng.uniform(0, 2 * np.pi)
            y = sphere_point(sc_basis, reg, rho, theta, face=-1, entering=bool(rng.integers(2)))
            prod = y[0] * y[1]
            assert (rho < reg.rho_star) == (prod < 0)

    def test_sphere_point_on_shell(self, sc_basis, rng):
        reg = region_spec(sc_basis, 1e-4)
        for _ in range(100):
            rho = rng.uniform(0.0, 1.3) * reg.rho_star
            y = sphere_point(sc_basis, reg, rho, rng.uniform(0, 2 * np.pi))
            assert linear_energy(sc_basis, y) == pytest.approx(reg.eps1, rel=1e-9)
            assert y[0] + y[1] == pytest.approx(-reg.C, rel=1e-12)

    def test_sphere_radius_bound(self, sc_basis):
        reg = region_spec(sc_basis, 1e-4)
        with pytest.raises(DomainError):
            sphere_point(sc_basis, reg, 10.0 * reg.rho_star, 0.0)
