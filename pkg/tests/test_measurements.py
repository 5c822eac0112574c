"""Focus, magnification, visible MLI, disparity and DoF measurements."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import plenoptiforge as pf
from plenoptiforge.errors import (EmptyDofError, InsufficientClustersError,
                                  NoFocusError, ValidationError)
from plenoptiforge.measurements import (DofInterval, best_visual_from,
                                        intersect_dof)
from plenoptiforge.optics_core import Ray2D, ideal_thin_lens, thin_singlet

# Golden from the first verified tracer run on the bundled double-gauss
# (cross-checked against the principal-plane imaging equation below).
GAUSS_PARAXIAL_FOCUS_AT_2000 = 78.966


class TestParaxialFocus:
    def test_two_f_conjugates(self):
        lens = thin_singlet(50.0, 15.0, n=1.5)
        assert pf.paraxial_focus(lens, 100.0) == pytest.approx(100.0, rel=1e-3)

    def test_infinity_conjugate(self):
        lens = thin_singlet(50.0, 15.0, n=1.5)
        assert pf.paraxial_focus(lens, 5e7) == pytest.approx(50.0, rel=1e-3)

    def test_double_gauss_golden(self, gauss):
        b = pf.paraxial_focus(gauss, 2000.0)
        assert b == pytest.approx(GAUSS_PARAXIAL_FOCUS_AT_2000, abs=5e-3)
        # cross-check against the thick-lens imaging equation
        pp = pf.principal_planes(gauss)
        efl = pf.effective_focal_length(gauss)
        a_eff = 2000.0 - pp.p1
        b_eq = pp.p2 + efl * a_eff / (a_eff - efl)
        assert b == pytest.approx(b_eq, rel=0.02)

    def test_virtual_image_raises(self):
        lens = thin_singlet(50.0, 15.0, n=1.5)
        with pytest.raises(NoFocusError):
            pf.paraxial_focus(lens, 30.0)


class TestMinBlur:
    def test_ideal_lens_equals_paraxial(self):
        lens = ideal_thin_lens(100.0, 30.0)
        b_par = pf.paraxial_focus(lens, 200.0)
        b_blur = pf.min_blur_focus(lens, 200.0, 40.0)
        assert b_blur == pytest.approx(b_par, abs=1e-6)

    def test_spherical_aberration_pulls_blur_inward(self, biconvex):
        # positive spherical aberration focuses marginal rays short, so the
        # caustic minimum sits before the paraxial focus
        b_par = pf.paraxial_focus(biconvex, 1000.0)
        b_blur = pf.min_blur_focus(biconvex, 1000.0, 24.0)
        assert b_blur < b_par

    def test_three_ray_caustic_brute_force(self):
        # hand-constructed bundle; exact minimum verified on a 1e-4 mm grid
        rays = [Ray2D.from_slope(0.0, 1.0, -0.020),
                Ray2D.from_slope(0.0, -1.0, 0.018),
                Ray2D.from_slope(0.0, 0.2, -0.003)]
        got = pf.bundle_min_blur_z(rays, z_min=0.0)

        zs = np.arange(0.0, 80.0, 1e-4)
        y = np.array([[r.y + r.slope * z for z in zs] for r in rays])
        diam = y.max(axis=0) - y.min(axis=0)
        brute = zs[int(np.argmin(diam))]
        assert got == pytest.approx(brute, abs=2e-4)
        # frozen: the r1/r2 crossing 2/0.038 wins with envelope 0.0947 mm
        assert got == pytest.approx(52.6316, abs=1e-3)

    def test_diverging_bundle_raises(self):
        rays = [Ray2D.from_slope(0.0, 1.0, 0.01),
                Ray2D.from_slope(0.0, -1.0, -0.01)]
        with pytest.raises(NoFocusError):
            pf.bundle_min_blur_z(rays, z_min=0.0)


class TestBestVisual:
    def test_fixed_point(self):
        assert best_visual_from(100.0, 100.0) == pytest.approx(100.0)

    def test_direct_evaluation(self):
        # 35.4% of the way from the paraxial point toward minimum blur
        assert best_visual_from(100.0, 97.0) == pytest.approx(
            100.0 + (0.531 / 1.5) * (97.0 - 100.0), abs=1e-12)

    @given(st.floats(50.0, 150.0), st.floats(-5.0, 5.0))
    @settings(max_examples=100, deadline=None)
    def test_betweenness(self, b_par, gap):
        b_bv = best_visual_from(b_par, b_par + gap)
        lo, hi = min(b_par, b_par + gap), max(b_par, b_par + gap)
        assert lo <= b_bv <= hi

    @given(st.floats(50.0, 150.0), st.floats(0.1, 5.0), st.floats(0.1, 4.0))
    @settings(max_examples=100, deadline=None)
    def test_linearity_in_gap(self, b_par, gap, k):
        d1 = best_visual_from(b_par, b_par + gap) - b_par
        dk = best_visual_from(b_par, b_par + k * gap) - b_par
        assert dk == pytest.approx(k * d1, rel=1e-9)

    @pytest.mark.parametrize("name,a_main,d_main", [
        ("double_gauss", 2000.0, 14.0),
        ("cooke_triplet", 1500.0, 10.0),
        ("achromat_doublet", 2000.0, 18.0),
        ("planoconvex", 1000.0, 11.0),
        ("biconvex", 1000.0, 11.0),
    ])
    def test_report_ordering_on_real_lenses(self, name, a_main, d_main):
        lens = pf.bundled_lens(name)
        fr = pf.best_visual_focus(lens, a_main, d_main)
        assert min(fr.b_parax, fr.b_blur) <= fr.b_bv <= max(fr.b_parax, fr.b_blur)


class TestMagnification:
    def test_sensor_on_mla_plane(self, ideal_design):
        dsn = dataclasses.replace(ideal_design, b_ml=1e-6)
        assert pf.measure_magnification(dsn) == pytest.approx(1.0, abs=1e-5)

    def test_thin_model_closed_form(self, ideal_design):
        # m = (b_main + a_ML + b_ML) / (b_main + a_ML) on the thin model
        d = ideal_design
        expect = (d.b_main + d.a_ml + d.b_ml) / (d.b_main + d.a_ml)
        assert pf.measure_magnification(d) == pytest.approx(expect, abs=1e-9)

    def test_monotone_in_b_ml(self, ideal_design):
        m1 = pf.measure_magnification(ideal_design)
        m2 = pf.measure_magnification(
            dataclasses.replace(ideal_design, b_ml=2 * ideal_design.b_ml))
        assert m2 > m1


class TestVisibleMli:
    def test_alpha_domain(self, ideal_design):
        with pytest.raises(ValidationError):
            pf.visible_mli_size(ideal_design, 0, alpha=2.0)

    def test_closed_aperture_goes_dark(self, ideal_design):
        dsn = dataclasses.replace(ideal_design, d_main=1e-4)
        assert pf.visible_mli_size(dsn) <= 2 * dsn.sensor.pixel_size

    def test_matched_aperture_fills_one_pitch(self, ideal_design,
                                              ideal_constraints):
        design, _ = pf.refine(ideal_design, ideal_constraints)
        m = pf.measure_magnification(design)
        d_vis = pf.visible_mli_size(design)
        assert abs(d_vis - m * design.mla.d_ml) <= design.sensor.pixel_size

    def test_monotone_in_aperture(self, ideal_design):
        sizes = [pf.visible_mli_size(
            dataclasses.replace(ideal_design, d_main=d))
            for d in (10.0, 20.0, 35.0, 50.0)]
        assert sizes == sorted(sizes)

    def test_mirror_invariance(self, ideal_design):
        up = pf.visible_mli_size(ideal_design, lenslet_index=1)
        down = pf.visible_mli_size(ideal_design, lenslet_index=-1)
        assert up == pytest.approx(down, abs=1e-12)


class TestDisparity:
    def test_thin_design_hits_target(self, ideal_design):
        got = pf.measure_disparity(ideal_design, 200.0, n_rays=1023)
        assert got == pytest.approx(0.5, abs=0.01)

    def test_pinhole_aperture_insufficient(self, ideal_design):
        dsn = dataclasses.replace(ideal_design, d_main=0.5)
        with pytest.raises(InsufficientClustersError):
            pf.measure_disparity(dsn, 200.0)

    def test_refined_gauss(self, gauss_refined, gauss_constraints):
        design, _ = gauss_refined
        got = pf.measure_disparity(design, gauss_constraints.a_main,
                                   n_rays=1023)
        assert got == pytest.approx(0.4, abs=0.01)


class TestDofIntervals:
    def test_interval_validation(self):
        with pytest.raises(ValidationError):
            DofInterval(10.0, 5.0)
        with pytest.raises(ValidationError):
            DofInterval(-1.0, 5.0)

    def test_eq5_set_algebra(self):
        got = intersect_dof([DofInterval(90.0, 110.0), DofInterval(95.0, 120.0)])
        assert (got.delta_min, got.delta_max) == (95.0, 110.0)

    def test_single_interval_identity(self):
        one = DofInterval(90.0, 110.0)
        assert intersect_dof([one]) == one

    def test_empty_intersection_raises(self):
        with pytest.raises(EmptyDofError):
            intersect_dof([DofInterval(90.0, 100.0), DofInterval(101.0, 120.0)])

    def test_focus_distance_inside_pixel_dof(self, ideal_design):
        sensor = ideal_design.sensor
        y = sensor.pixel_center(sensor.pixel_index(0.0))
        dof = pf.pixel_dof(ideal_design, y)
        assert dof.delta_min <= ideal_design.a_main <= dof.delta_max

    def test_stopping_down_widens_dof(self, ideal_design):
        sensor = ideal_design.sensor
        y = sensor.pixel_center(sensor.pixel_index(0.0))
        wide = pf.pixel_dof(ideal_design, y)
        dsn = dataclasses.replace(ideal_design, d_main=ideal_design.d_main / 2)
        narrow_ap = pf.pixel_dof(dsn, y)
        assert narrow_ap.delta_min <= wide.delta_min
        assert narrow_ap.delta_max >= wide.delta_max

    def test_dark_pixel_raises(self, ideal_design):
        with pytest.raises(pf.DarkPixelError):
            pf.pixel_dof(ideal_design, 4.9)   # sensor edge, far off any MLI

    def test_camera_dof_subset_of_center_pixel(self, gauss_refined):
        design, _ = gauss_refined
        dof = pf.camera_dof(design, 0)
        sensor = design.sensor
        y = sensor.pixel_center(sensor.pixel_index(0.0))
        pdof = pf.pixel_dof(design, y)
        assert pdof.delta_min <= dof.delta_min + 1e-9
        assert dof.delta_max <= pdof.delta_max + 1e-9

    def test_camera_dof_contains_focus(self, gauss_refined, gauss_constraints):
        design, _ = gauss_refined
        dof = pf.camera_dof(design, 0)
        assert dof.delta_min <= gauss_constraints.a_main <= dof.delta_max
