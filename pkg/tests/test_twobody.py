import math

import numpy as np
import pytest
from scipy.special import jn_zeros

from threshold_lab.errors import BracketError, DegenerateInputError
from threshold_lab.model import PairPotential, jacobi_frame, uniform_system, zero_potential
from threshold_lab import twobody as tb

FRAME = jacobi_frame(uniform_system("gaussian", 1.0, 1.0), (1, 2))
WELL = PairPotential("square_well", 1.0)
EXPO = PairPotential("exponential", 1.0)
GAUSS = PairPotential("gaussian", 1.0)

SW_LAMBDA_STAR = math.pi ** 2 / 4.0
EX_LAMBDA_STAR = jn_zeros(0, 1)[0] ** 2 / 4.0
# pinned by the shooting oracle before the matrix build; the in-suite oracle
# run below re-derives it
GAUSS_LAMBDA_STAR_ORACLE = 2.684004650924105


class TestBSMaxEigenvalue:
    def test_square_well_zero_energy(self):
        assert tb.bs_max_eigenvalue(WELL, FRAME, 0.0) == pytest.approx(
            4.0 / math.pi ** 2, rel=1e-8
        )

    def test_exponential_zero_energy(self):
        assert tb.bs_max_eigenvalue(EXPO, FRAME, 0.0) == pytest.approx(
            4.0 / jn_zeros(0, 1)[0] ** 2, rel=1e-8
        )

    def test_kernel_dies_at_large_z(self):
        assert tb.bs_max_eigenvalue(GAUSS, FRAME, 40.0) < 5e-3

    @pytest.mark.parametrize("V", [WELL, EXPO, GAUSS], ids=["well", "expo", "gauss"])
    def test_strict_monotonicity_20_point_grid(self, V):
        zs = np.linspace(0.0, 5.0, 20)
        mus = [tb.bs_max_eigenvalue(V, FRAME, z) for z in zs]
        assert all(a > b for a, b in zip(mus, mus[1:]))

    def test_matrix_symmetric(self):
        rule = tb.bs_radial_rule(GAUSS, FRAME.alpha, z=0.7)
        m = tb.bs_matrix(GAUSS, FRAME, 0.7, rule)
        assert np.max(np.abs(m - m.T)) <= 1e-12 * np.max(np.abs(m))

    def test_operator_wrapper(self):
        op = tb.bs_operator(GAUSS, FRAME, 0.3)
        assert op.z == 0.3
        assert len(op.nodes) == len(op.weights) == 128
        eigs = op.eigenvalues()
        assert np.all(np.isreal(eigs))
        assert op.max_eigenvalue() == pytest.approx(
            tb.bs_max_eigenvalue(GAUSS, FRAME, 0.3), rel=1e-14
        )


class TestCriticalCoupling:
    def test_square_well(self):
        assert tb.critical_coupling(WELL, FRAME) == pytest.approx(SW_LAMBDA_STAR, rel=1e-4)

    def test_exponential(self):
        assert tb.critical_coupling(EXPO, FRAME) == pytest.approx(EX_LAMBDA_STAR, rel=1e-4)

    def test_gaussian_matches_pinned_oracle_value(self):
        assert tb.critical_coupling(GAUSS, FRAME) == pytest.approx(
            GAUSS_LAMBDA_STAR_ORACLE, rel=1e-4
        )

    def test_zero_potential_degenerate(self):
        with pytest.raises(DegenerateInputError):
            tb.critical_coupling(zero_potential(), FRAME)

    @pytest.mark.parametrize(
        "V,exact",
        [(WELL, SW_LAMBDA_STAR), (EXPO, EX_LAMBDA_STAR)],
        ids=["well", "expo"],
    )
    def test_oracle_equivalence(self, V, exact):
        cc = tb.critical_coupling(V, FRAME)
        oracle = tb.oracle_critical_coupling(V, FRAME)
        assert abs(cc - oracle) / exact <= 1e-4
        assert oracle == pytest.approx(exact, rel=1e-9)


class TestSubcriticalityMargin:
    def test_strictly_subcritical(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        system = uniform_system("gaussian", 1.0, 0.8 * lam_star)
        rep = tb.subcriticality_margin(system)
        assert rep.satisfied
        assert rep.eps == pytest.approx(0.2 * lam_star, rel=1e-6)

    def test_boundary_violated(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        rep = tb.subcriticality_margin(uniform_system("gaussian", 1.0, lam_star))
        assert not rep.satisfied
        assert abs(rep.eps) <= 1e-9 * lam_star

    def test_mixed_potentials_min_governs(self):
        # exponential pairs are the weakest binders here (largest lambda*),
        # so the margin must follow the smallest lambda*
        pots = {
            (1, 2): GAUSS,
            (1, 3): EXPO,
            (2, 3): GAUSS,
        }
        from threshold_lab.model import ParticleSystem

        system = ParticleSystem((1.0, 1.0, 1.0), pots, 1.0)
        rep = tb.subcriticality_margin(system)
        assert rep.eps == pytest.approx(min(rep.lambda_stars.values()) - 1.0, rel=1e-12)


class TestBindingEnergy:
    def test_subcritical_returns_none(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        assert tb.twobody_binding_energy(GAUSS, FRAME, 0.9 * lam_star) is None
        assert tb.twobody_binding_energy(GAUSS, FRAME, lam_star) is None

    @pytest.mark.parametrize("V", [WELL, GAUSS], ids=["well", "gauss"])
    def test_matches_oracle_at_1p2_critical(self, V):
        lam = 1.2 * tb.critical_coupling(V, FRAME)
        e_bs = tb.twobody_binding_energy(V, FRAME, lam)
        e_oracle = tb.oracle_binding_energy(V, FRAME, lam)
        assert e_bs == pytest.approx(e_oracle, rel=1e-4)

    def test_energy_vanishes_monotonically_toward_threshold(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        es = [
            tb.twobody_binding_energy(GAUSS, FRAME, lam_star * (1.0 + f))
            for f in (0.3, 0.1, 0.03, 0.01)
        ]
        assert all(e < 0 for e in es)
        assert all(abs(a) > abs(b) for a, b in zip(es, es[1:]))


class TestSize:
    def test_deep_well_matches_oracle(self):
        lam = 5.0 * tb.critical_coupling(WELL, FRAME)
        r2 = tb.twobody_size(WELL, FRAME, lam)
        r2_oracle = tb.oracle_mean_square_radius(WELL, FRAME, lam)
        assert r2 == pytest.approx(r2_oracle, rel=1e-3)
        assert 0.1 < r2 < 10.0  # comparable to the well radius squared

    def test_size_divergence_exponent(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        lams = [lam_star * (1.0 + f) for f in np.geomspace(1e-1, 1e-4, 7)]
        points = tb.sweep_two_body(GAUSS, FRAME, lams)
        assert tb.fit_size_exponent(points) == pytest.approx(1.0, abs=0.2)

    def test_profile_scaling(self):
        # r -> s r in the profile scales <r^2> by s^2 at fixed lambda/lambda*
        s = 1.7
        wide = PairPotential("gaussian", s)
        lam_narrow = 3.0 * tb.critical_coupling(GAUSS, FRAME)
        lam_wide = 3.0 * tb.critical_coupling(wide, FRAME)
        r2_narrow = tb.twobody_size(GAUSS, FRAME, lam_narrow)
        r2_wide = tb.twobody_size(wide, FRAME, lam_wide)
        assert r2_wide / r2_narrow == pytest.approx(s ** 2, rel=1e-4)


class TestShootingOracle:
    def test_square_well_below_threshold_no_node(self):
        res = tb.shooting_oracle(WELL, FRAME, math.pi ** 2 / 4.0 - 1e-6, 0.0)
        assert tb.total_nodes(res, 0.0) == 0

    def test_square_well_above_threshold_one_node(self):
        res = tb.shooting_oracle(WELL, FRAME, math.pi ** 2 / 4.0 + 1e-3, 0.0)
        assert tb.total_nodes(res, 0.0) == 1

    def test_free_equation_stays_positive(self):
        res = tb.shooting_oracle(GAUSS, FRAME, 0.0, 0.0)
        assert res.nodes == 0
        assert res.u_end > 0.0

    def test_bound_state_count_parity(self):
        # between the first and second criticality exactly one BS eigenvalue
        # of lambda*K(0) exceeds 1 and the zero-energy solution has one node
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        lam = 1.5 * lam_star
        rule = tb.bs_radial_rule(GAUSS, FRAME.alpha)
        eigs = np.linalg.eigvalsh(tb.bs_matrix(GAUSS, FRAME, 0.0, rule))
        assert int(np.sum(lam * eigs > 1.0)) == 1
        res = tb.shooting_oracle(GAUSS, FRAME, lam, 0.0)
        assert tb.total_nodes(res, 0.0) == 1


class TestTabulatedAndAsymmetric:
    def test_tabulated_profile_matches_its_source(self):
        # a densely sampled gaussian table must reproduce the gaussian
        # critical coupling up to interpolation error
        r = np.linspace(0.0, 8.0, 801)
        tab = PairPotential(
            "tabulated", 1.0, table=tuple(zip(r.tolist(), np.exp(-r * r).tolist()))
        )
        cc_tab = tb.critical_coupling(tab, FRAME)
        cc_gauss = tb.critical_coupling(GAUSS, FRAME)
        assert cc_tab == pytest.approx(cc_gauss, rel=1e-4)

    def test_tabulated_oracle_equivalence(self):
        r = np.linspace(0.0, 8.0, 801)
        tab = PairPotential(
            "tabulated", 1.0, table=tuple(zip(r.tolist(), np.exp(-r * r).tolist()))
        )
        cc = tb.critical_coupling(tab, FRAME)
        oracle = tb.oracle_critical_coupling(tab, FRAME)
        assert abs(cc - oracle) / oracle <= 1e-4

    def test_unequal_masses_both_routes_agree(self):
        system = uniform_system("gaussian", 1.0, 1.0, masses=(1.0, 2.5, 4.0))
        for pair in [(1, 2), (2, 3)]:
            frame = jacobi_frame(system, pair)
            cc = tb.critical_coupling(system.potential(pair), frame)
            oracle = tb.oracle_critical_coupling(system.potential(pair), frame)
            assert abs(cc - oracle) / oracle <= 1e-4
            lam = 1.3 * cc
            e_bs = tb.twobody_binding_energy(system.potential(pair), frame, lam)
            e_oracle = tb.oracle_binding_energy(system.potential(pair), frame, lam)
            assert e_bs == pytest.approx(e_oracle, rel=1e-4)


class TestSweep:
    def test_rows_and_margin_fields(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        points = tb.sweep_two_body(GAUSS, FRAME, [1.05 * lam_star, 1.02 * lam_star])
        assert [p.coupling for p in points] == [1.05 * lam_star, 1.02 * lam_star]
        for p in points:
            assert p.E2 < 0
            assert p.eps_R7 < 0  # control sweep sits above the two-body critical point
            taus = [t for _, t in p.tail]
            assert all(b <= a + 1e-12 for a, b in zip(taus, taus[1:]))

    def test_subcritical_sweep_rejected(self):
        lam_star = tb.critical_coupling(GAUSS, FRAME)
        with pytest.raises(BracketError):
            tb.sweep_two_body(GAUSS, FRAME, [0.5 * lam_star])
