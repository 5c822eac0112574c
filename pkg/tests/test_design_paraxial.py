"""Closed-form thin design, principal planes, thick corrections."""

import math

import pytest
from hypothesis import given, settings, strategies as st

import plenoptiforge as pf
from plenoptiforge.design_paraxial import _solve_mla_distances
from plenoptiforge.errors import InfeasibleError, NoFocusError, ValidationError
from plenoptiforge.optics_core import (PLANAR, LensPrescription, SensorSpec,
                                       Surface, ideal_thin_lens, thin_singlet)

SENSOR = SensorSpec(0.01, 10.0)


def constraints(a_main=200.0, gamma=0.5, f_ml=1.0, d_ml=0.5):
    return pf.DesignConstraints(a_main=a_main, gamma=gamma, f_ml=f_ml,
                                d_ml=d_ml, sensor=SENSOR)


def residuals(design, gamma):
    """Relative residuals of the three thin-model constraints."""
    b, a, bm = design.b_main, design.a_ml, design.b_ml
    f_ml, d_ml = design.mla.f_ml, design.mla.d_ml
    c1 = abs(1.0 / a + 1.0 / bm - 1.0 / f_ml) * f_ml
    c2 = abs(bm / d_ml - (b + a) / design.d_main) / (bm / d_ml)
    m = (b + a + bm) / (b + a)
    c3 = abs((1 + gamma) * m * d_ml / (a + bm) - d_ml / a) / (d_ml / a)
    return c1, c2, c3


class TestThinDesign:
    def test_two_f_symmetric(self):
        d = pf.thin_lens_design(constraints(a_main=200.0), 100.0)
        assert d.b_main == pytest.approx(200.0, abs=1e-12)

    def test_worked_numbers(self):
        # b_main = 100, f_ML = 1, gamma = 0.5:
        # a_ML = -50 + sqrt(300 + 2500), b_ML from the disparity solution
        a_ml, b_ml = _solve_mla_distances(100.0, 0.5, 1.0)
        assert a_ml == pytest.approx(2.9150, abs=5e-5)
        assert b_ml == pytest.approx(1.5222, abs=5e-5)
        m = (100.0 + a_ml + b_ml) / (100.0 + a_ml)
        assert m == pytest.approx(1.01479, abs=5e-6)

    def test_constraint_residuals(self):
        d = pf.thin_lens_design(constraints(), 100.0)
        c1, c2, c3 = residuals(d, 0.5)
        assert c1 < 1e-9 and c2 < 1e-9 and c3 < 1e-9

    def test_infeasible_inside_focal_length(self):
        with pytest.raises(InfeasibleError):
            pf.thin_lens_design(constraints(a_main=80.0), 100.0)

    def test_gamma_domain(self):
        with pytest.raises(ValidationError):
            constraints(gamma=0.0)
        with pytest.raises(ValidationError):
            constraints(gamma=1.2)

    @given(st.floats(20.0, 200.0), st.floats(0.05, 1.0), st.floats(0.5, 5.0))
    @settings(max_examples=200, deadline=None)
    def test_positive_root_always(self, b_main, gamma, f_ml):
        a_ml, b_ml = _solve_mla_distances(b_main, gamma, f_ml)
        assert a_ml > 0 and b_ml > 0

    @given(st.floats(20.0, 200.0), st.floats(0.05, 0.9), st.floats(0.5, 5.0))
    @settings(max_examples=200, deadline=None)
    def test_gamma_monotonicity(self, b_main, gamma, f_ml):
        a1, _ = _solve_mla_distances(b_main, gamma, f_ml)
        a2, _ = _solve_mla_distances(b_main, gamma + 0.05, f_ml)
        assert a2 < a1


class TestPrincipalPlanes:
    def test_ideal_thin_lens(self):
        pp = pf.principal_planes(ideal_thin_lens(100.0, 20.0))
        assert pp.p1 == pytest.approx(0.0, abs=1e-9)
        assert pp.p2 == pytest.approx(0.0, abs=1e-9)

    def test_zero_thickness_singlet(self):
        pp = pf.principal_planes(thin_singlet(50.0, 15.0))
        assert pp.p1 == pytest.approx(0.0, abs=1e-6)
        assert pp.p2 == pytest.approx(0.0, abs=1e-6)

    def test_symmetric_biconvex_symmetry(self, biconvex):
        pp = pf.principal_planes(biconvex)
        assert pp.p1 == pytest.approx(pp.p2, abs=1e-6)

    def test_planoconvex_textbook_offset(self):
        # curved side first: p1 = 0, p2 = -f (n-1) t / (n R)
        n, t, r = 1.5168, 3.5, 25.8
        surfaces = (Surface(r, t, n, 10.0, is_stop=True),
                    Surface(PLANAR, 0.0, 1.0, 10.0))
        lens = LensPrescription(surfaces)
        f = pf.effective_focal_length(lens)
        pp = pf.principal_planes(lens)
        assert pp.p1 == pytest.approx(0.0, abs=1e-4)
        assert pp.p2 == pytest.approx(-f * (n - 1) * t / (n * r), rel=5e-3)

    def test_afocal_raises(self):
        slab = LensPrescription((Surface(PLANAR, 2.0, 1.5, 10.0),
                                 Surface(PLANAR, 0.0, 1.0, 10.0)))
        with pytest.raises(NoFocusError):
            pf.principal_planes(slab)


class TestThickDesign:
    def test_degenerates_to_thin_for_zero_thickness(self):
        lens = thin_singlet(50.0, 20.0)
        cons = constraints(a_main=150.0, f_ml=1.0, gamma=0.5)
        f = pf.effective_focal_length(lens)
        thin = pf.thin_lens_design(cons, f)
        thick = pf.thick_lens_design(cons, lens)
        assert thick.b_main == pytest.approx(thin.b_main, rel=1e-4)
        assert thick.a_ml == pytest.approx(thin.a_ml, rel=1e-4)
        assert thick.b_ml == pytest.approx(thin.b_ml, rel=1e-4)
        assert thick.d_main == pytest.approx(thin.d_main, rel=5e-3)

    def test_b_main_is_shifted_thin_solution(self, gauss):
        # Fixed conjugates: the thick image distance equals the thin-lens
        # image distance evaluated at the corrected object distance, plus
        # the rear principal plane offset.
        cons = constraints(a_main=2000.0, f_ml=2.0, gamma=0.4)
        pp = pf.principal_planes(gauss)
        efl = pf.effective_focal_length(gauss)
        thick = pf.thick_lens_design(cons, gauss)
        a_eff = 2000.0 - pp.p1
        b_thin_shifted = efl * a_eff / (a_eff - efl)
        assert thick.b_main == pytest.approx(pp.p2 + b_thin_shifted, abs=1e-9)

    def test_aperture_probe_matches_eq14_in_thin_limit(self):
        lens = thin_singlet(50.0, 25.0)
        cons = constraints(a_main=150.0, f_ml=1.0, gamma=0.5)
        thick = pf.thick_lens_design(cons, lens)
        eq14 = cons.d_ml * (thick.b_main + thick.a_ml) / thick.b_ml
        assert thick.d_main == pytest.approx(eq14, rel=5e-3)

    def test_infeasible_object_inside_focus(self, gauss):
        with pytest.raises(InfeasibleError):
            pf.thick_lens_design(constraints(a_main=60.0), gauss)


class TestFNumberMatching:
    @given(st.floats(60.0, 150.0), st.floats(150.0, 4000.0),
           st.floats(0.1, 1.0), st.floats(0.5, 4.0))
    @settings(max_examples=100, deadline=None)
    def test_eq8_exact_for_thin_designs(self, f_main, a_main, gamma, f_ml):
        if a_main <= 1.2 * f_main:
            a_main = 1.2 * f_main + 10.0
        cons = pf.DesignConstraints(a_main=a_main, gamma=gamma, f_ml=f_ml,
                                    d_ml=0.5, sensor=SENSOR)
        d = pf.thin_lens_design(cons, f_main)
        lhs = d.b_ml / d.mla.d_ml
        rhs = (d.b_main + d.a_ml) / d.d_main
        assert abs(lhs - rhs) / lhs < 1e-9
