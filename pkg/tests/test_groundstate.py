import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sint

from nlsblowup.evolution import energy
from nlsblowup.grid import Field, GridSpec, PhysParams, norm_gradL2, norm_L2, norm_Lp, trig_interpolate
from nlsblowup.groundstate import (
    DomainTruncationError,
    GroundStateError,
    Kind,
    ResolutionError,
    closed_form_Q_1d,
    fractional_zero_symbol,
    gn_constant,
    gn_sides,
    min_rho,
    pohozaev_residual,
    sharp_gn_constant,
    solve_ground_state,
    threshold_family,
)

from oracles import SQRT3, sech_quad, soliton

GRAD2 = SQRT3 * np.pi / 4  # ||Q'||^2 for the 1D quintic soliton
L4 = 3.0  # ||Q||_4^4 = 3 int sech^2(2x)


def rel_l2(a, b):
    return np.sqrt(np.sum(np.abs(a - b) ** 2) / np.sum(np.abs(b) ** 2))


class TestCritical:
    def test_matches_closed_form(self, Q1):
        assert rel_l2(Q1.values, soliton(Q1.grid.x1d)) <= 1e-8

    def test_mass(self, Q1):
        ref = sech_quad(lambda x: soliton(x) ** 2)
        assert abs(Q1.mass - ref) <= 1e-6 * ref
        assert abs(Q1.mass - SQRT3 * np.pi / 2) <= 1e-6

    def test_certificate(self, Q1):
        assert Q1.residual_Linf <= 1e-10
        assert np.all(Q1.values > 0)
        assert np.allclose(Q1.values[1:], Q1.values[1:][::-1], atol=1e-12)

    def test_coarse_grid_fails_loudly(self, crit_params):
        with pytest.raises(GroundStateError):
            solve_ground_state(Kind.CRITICAL, crit_params, GridSpec(1, 40.0, 16))

    def test_small_box_truncation(self):
        with pytest.raises(DomainTruncationError):
            closed_form_Q_1d(4.0, GridSpec(1, 8.0, 256))

    def test_hypothesis_guard(self):
        with pytest.raises(ValueError):
            solve_ground_state(Kind.CRITICAL, PhysParams(-1, 0, 6, 2, 1), GridSpec(1, 32.0, 256))

    def test_two_grid_convergence(self, crit_params, Q1):
        fine = solve_ground_state(Kind.CRITICAL, crit_params, GridSpec(1, 32.0, 2048))
        assert abs(fine.mass - Q1.mass) <= 1e-8 * Q1.mass

    def test_two_dimensional_townes(self):
        params = PhysParams(-1.0, 0.0, 2.0, 1.0, 2)
        Q = solve_ground_state(Kind.CRITICAL, params, GridSpec(2, 40.0, 512))
        # the 2D cubic ground-state mass, 11.70089...; no closed form, compared to 1e-4
        assert abs(Q.mass - 11.700896) <= 1e-4 * 11.700896
        assert pohozaev_residual(Q) <= 1e-8
        C = sharp_gn_constant(Q)
        assert np.isclose(C, 1 / Q.mass)


class TestSharpConstant:
    def test_value(self, Q1):
        assert abs(sharp_gn_constant(Q1) - 4 / (3 * np.pi**2)) <= 1e-6

    def test_resolution_independent(self, crit_params, Q1):
        other = solve_ground_state(Kind.CRITICAL, crit_params, GridSpec(1, 48.0, 2048))
        assert abs(sharp_gn_constant(other) - sharp_gn_constant(Q1)) <= 1e-6

    def test_wrong_kind(self, Q51):
        with pytest.raises(ValueError):
            sharp_gn_constant(Q51)

    @given(amp=st.floats(0.1, 5.0), width=st.floats(0.3, 3.0), shift=st.floats(-3, 3))
    @settings(max_examples=30, deadline=None)
    def test_strict_inequality_off_optimisers(self, Q1, amp, width, shift):
        g = Q1.grid
        f = Field(g, amp * np.exp(-((g.x1d - shift) / width) ** 2))
        lhs, rhs = gn_sides(f, 4.0, sharp_gn_constant(Q1))
        assert lhs < rhs


class TestGeneralGNConstant:
    def test_cubic_closed_form(self, grid1d):
        # optimiser sqrt(2) sech x: ||.||_4^4 = 16/3, ||.||_2^2 = 4, ||.'||_2^2 = 4/3
        l4 = sech_quad(lambda x: 4 / np.cosh(x) ** 4)
        m = sech_quad(lambda x: 2 / np.cosh(x) ** 2)
        g2 = sech_quad(lambda x: 2 * np.tanh(x) ** 2 / np.cosh(x) ** 2)
        oracle = l4 / (m**1.5 * g2**0.5)
        assert abs(oracle - 1 / SQRT3) <= 1e-12
        assert abs(gn_constant(2.0, grid1d) - oracle) <= 1e-8 * oracle

    def test_critical_case_matches_sharp_constant(self, grid1d, Q1):
        # (1/6)||f||_6^6 <= (C/2)||f||^4 ||f'||^2 is the same inequality scaled by 3
        assert abs(gn_constant(4.0, grid1d) - 3 * sharp_gn_constant(Q1)) <= 1e-8

    @given(amp=st.floats(0.1, 5.0), width=st.floats(0.3, 3.0), shift=st.floats(-3, 3))
    @settings(max_examples=30, deadline=None)
    def test_inequality_holds_off_optimisers(self, grid1d, amp, width, shift):
        g = grid1d
        f = Field(g, amp * np.exp(-((g.x1d - shift) / width) ** 2)
                  * (1 + 0.5 * np.cos(g.x1d)))
        C = gn_constant(2.0, g)
        assert norm_Lp(f, 4) ** 4 < C * norm_L2(f) ** 3 * norm_gradL2(f)

    def test_exponent_range(self, grid1d):
        with pytest.raises(ValueError):
            gn_constant(6.0, grid1d)


class TestPohozaev:
    def test_closed_form_sides(self):
        half_grad = 0.5 * sech_quad(lambda x: SQRT3 / np.cosh(2 * x) * np.tanh(2 * x) ** 2)
        sixth = sech_quad(lambda x: soliton(x) ** 6) / 6
        assert abs(half_grad - SQRT3 * np.pi / 8) <= 1e-12
        assert abs(sixth - SQRT3 * np.pi / 8) <= 1e-12

    def test_residual_small(self, Q1):
        assert pohozaev_residual(Q1) <= 1e-8

    def test_doubled_profile_flagged(self, Q1):
        from dataclasses import replace

        doubled = replace(Q1, field=Q1.field.with_values(2 * Q1.values))
        assert pohozaev_residual(doubled) > 0.5

    def test_translation_invariant(self, Q1):
        from dataclasses import replace

        moved = replace(Q1, field=Q1.field.with_values(np.roll(Q1.values, 37)))
        assert abs(pohozaev_residual(moved) - pohozaev_residual(Q1)) <= 1e-12


class TestThresholdFamily:
    @given(rho=st.floats(0.5, 4.0))
    @settings(max_examples=15, deadline=None)
    def test_unit_c_preserves_mass(self, Q1, rho):
        u = threshold_family(Q1, 1.0, rho, GridSpec(1, 64.0, 4096))
        assert abs(norm_L2(u) ** 2 - Q1.mass) <= 1e-10 * Q1.mass

    def test_min_rho_formula(self, Q1, crit_params):
        # oracle: the threshold formula with closed-form norms; it evaluates to 2.87485
        c = 1.1
        ref = 2 * c**2 * L4 / (4 * (c**4 - 1) * GRAD2)
        assert abs(min_rho(Q1, c, crit_params) - ref) <= 1e-8 * ref
        assert abs(ref - 2.87485) <= 1e-5

    def test_energy_changes_sign_at_min_rho(self, Q1, crit_params):
        rs = min_rho(Q1, 1.1, crit_params)
        g = GridSpec(1, 32.0, 4096)
        assert energy(threshold_family(Q1, 1.1, rs * (1 + 1e-6), g), crit_params) < 0
        assert energy(threshold_family(Q1, 1.1, rs * (1 - 1e-2), g), crit_params) > 0

    def test_min_rho_guard(self, Q1, crit_params):
        with pytest.raises(ValueError):
            min_rho(Q1, 1.0, crit_params)
        with pytest.raises(ValueError):
            min_rho(Q1, -0.5, crit_params)

    @given(c1=st.floats(1.01, 3.0), c2=st.floats(1.01, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_min_rho_decreasing_in_c(self, Q1, crit_params, c1, c2):
        lo, hi = sorted((c1, c2))
        assert min_rho(Q1, hi, crit_params) <= min_rho(Q1, lo, crit_params) * (1 + 1e-12)

    def test_unresolved_rescaling_rejected(self, Q1):
        with pytest.raises(ValueError):
            threshold_family(Q1, 1.1, 40.0)


class TestFractional:
    def test_certificate(self, Q51):
        assert Q51.residual_Linf <= 1e-10
        assert np.all(Q51.values > 0)
        assert np.allclose(Q51.values[1:], Q51.values[1:][::-1], atol=1e-12)

    def test_residual_by_dense_dft(self, Q51, super_params):
        # independent multiplier application: an explicit extended-precision DFT matrix
        # in place of the FFT, so the oracle's own round-off stays far below the bound
        g = Q51.grid
        n = g.points
        j = np.arange(n, dtype=np.longdouble)
        phase = np.outer(j, j) % n * (2 * np.pi / np.longdouble(n))
        C, S = np.cos(phase), np.sin(phase)
        k = g.k1d().astype(np.longdouble)
        sym = k**2 + 3 * np.abs(k) ** (np.longdouble(1) / 3)
        sym[0] = fractional_zero_symbol(g, 3.0, 1 / 6)
        q = Q51.values.astype(np.longdouble)
        re, im = C @ q, -(S @ q)  # forward transform of real data
        lin = (C @ (sym * re) - S @ (sym * im)) / n
        res = np.max(np.abs(lin - q**7)) / np.max(q)
        assert res <= 1e-10

    def test_zero_symbol_vanishes_with_box(self):
        small = fractional_zero_symbol(GridSpec(1, 64.0, 16), 3.0, 1 / 6)
        large = fractional_zero_symbol(GridSpec(1, 640.0, 16), 3.0, 1 / 6)
        assert 0 < large < small

    def test_hypothesis_guard(self, crit_params):
        with pytest.raises(ValueError):
            solve_ground_state(Kind.FRAC, crit_params, GridSpec(1, 64.0, 2048))

    def test_coarse_grid_rejected(self, super_params):
        with pytest.raises(ResolutionError):
            solve_ground_state(Kind.FRAC, super_params, GridSpec(1, 64.0, 512))


class TestMixed:
    def test_certificate(self, R52):
        assert R52.residual_Linf <= 1e-10
        assert np.all(R52.values > 0)
        assert np.allclose(R52.values[1:], R52.values[1:][::-1], atol=1e-12)

    def test_peak_from_first_integral(self, R52):
        # (1/2) R'^2 = R^3/3 - R^8/8 vanishes at the peak
        assert abs(R52.values.max() - (8 / 3) ** 0.2) <= 1e-6

    def test_profile_from_first_integral(self, R52):
        R0 = (8 / 3) ** 0.2
        for r in (1.0, 0.5, 0.2):
            x = sint.quad(lambda s: 1 / np.sqrt(2 * s**3 / 3 - s**8 / 4), r, R0, limit=200)[0]
            got = trig_interpolate(R52.values, R52.grid, np.array([x])).real[0]
            assert abs(got - r) <= 1e-4 * r

    def test_no_mass_term_requires_supercritical(self, crit_params):
        with pytest.raises(ValueError):
            solve_ground_state(Kind.MIXED, crit_params, GridSpec(1, 64.0, 256))
