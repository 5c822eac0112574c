"""Four-case refinement loop, derivative signs, DoF meta-optimization."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import plenoptiforge as pf
from plenoptiforge.design_refine import disparity_coefficient, gamma_partials
from plenoptiforge.errors import NoConvergenceError, ValidationError
from plenoptiforge.measurements import DofInterval
from plenoptiforge.optics_core import SensorSpec

SENSOR = SensorSpec(0.01, 10.0)

positive = st.floats(1.0, 500.0)
small_positive = st.floats(0.5, 30.0)


class TestGammaPartials:
    def test_spec_triple_signs_and_fd(self):
        b_main, a_ml, b_ml = 100.0, 2.915, 1.522
        d_a, d_b = gamma_partials(b_main, a_ml, b_ml)
        assert d_a < 0 < d_b
        h = 1e-6
        fd_a = (disparity_coefficient(b_main, a_ml + h, b_ml)
                - disparity_coefficient(b_main, a_ml - h, b_ml)) / (2 * h)
        fd_b = (disparity_coefficient(b_main, a_ml, b_ml + h)
                - disparity_coefficient(b_main, a_ml, b_ml - h)) / (2 * h)
        assert d_a == pytest.approx(fd_a, rel=1e-6)
        assert d_b == pytest.approx(fd_b, rel=1e-6)

    @given(positive, small_positive, small_positive)
    @settings(max_examples=300, deadline=None)
    def test_signs_everywhere(self, b_main, a_ml, b_ml):
        d_a, d_b = gamma_partials(b_main, a_ml, b_ml)
        assert d_a < 0
        assert d_b > 0

    @given(positive, small_positive, small_positive, st.floats(0.5, 4.0))
    @settings(max_examples=100, deadline=None)
    def test_scaling_by_inverse_length(self, b_main, a_ml, b_ml, k):
        d_a, d_b = gamma_partials(b_main, a_ml, b_ml)
        d_ak, d_bk = gamma_partials(k * b_main, k * a_ml, k * b_ml)
        assert d_ak == pytest.approx(d_a / k, rel=1e-9)
        assert d_bk == pytest.approx(d_b / k, rel=1e-9)

    def test_closed_form_matches_design_target(self):
        # the emitted thin design solves the constraint system, so the
        # closed-form coefficient recovers the requested gamma exactly
        cons = pf.DesignConstraints(a_main=200.0, gamma=0.37, f_ml=1.0,
                                    d_ml=0.5, sensor=SENSOR)
        d = pf.thin_lens_design(cons, 100.0)
        got = disparity_coefficient(d.b_main, d.a_ml, d.b_ml)
        assert got == pytest.approx(0.37, abs=1e-12)


def _loop_changes(trace):
    """(a_ml, b_ml) changes between consecutive trace entries."""
    out = []
    for a, b in zip(trace.iterations, trace.iterations[1:]):
        da = b.a_ml - a.a_ml
        db = b.b_ml - a.b_ml
        if da != 0.0 or db != 0.0:
            out.append((da, db))
    return out


class TestRefine:
    def test_ideal_design_is_fixed_point(self, ideal_design, ideal_constraints):
        refined, trace = pf.refine(ideal_design, ideal_constraints)
        assert trace.converged
        changes = _loop_changes(trace)
        assert len(changes) == 0          # no four-case action was needed
        assert refined.a_ml == pytest.approx(ideal_design.a_ml, abs=1e-12)
        assert refined.b_ml == pytest.approx(ideal_design.b_ml, abs=1e-12)

    def test_gauss_converges(self, gauss_refined, gauss_constraints):
        design, trace = gauss_refined
        assert trace.converged
        # the loop's own final measurements satisfy the tolerances
        settings_ = pf.RefineSettings().resolved(design)
        last_loop = trace.iterations[-2]
        assert abs(last_loop.gamma_tilde - 0.4) <= settings_.eps_gamma
        assert abs(last_loop.b_ml_tilde - last_loop.b_ml) <= settings_.eps_focus

    def test_each_iteration_changes_exactly_one_knob(self, gauss_refined):
        _, trace = gauss_refined
        for da, db in _loop_changes(trace):
            assert (da != 0.0) != (db != 0.0)

    def test_step_sizes_never_increase(self, gauss_refined):
        _, trace = gauss_refined
        sizes = [abs(da) + abs(db) for da, db in _loop_changes(trace)]
        for s1, s2 in zip(sizes, sizes[1:]):
            assert s2 <= s1 + 1e-12

    def test_visible_mli_within_band(self, gauss_refined):
        design, trace = gauss_refined
        m = pf.measure_magnification(design)
        d_vis = pf.visible_mli_size(design)
        eps = design.sensor.pixel_size
        assert m * design.mla.d_ml - eps <= d_vis <= m * design.mla.d_ml + eps

    def test_loop_budget_raises_with_trace(self, gauss, gauss_constraints):
        seed = pf.thick_lens_design(gauss_constraints, gauss)
        tiny = pf.RefineSettings(max_iters=1, eps_gamma=1e-9, eps_focus=1e-12)
        with pytest.raises(NoConvergenceError) as err:
            pf.refine(seed, gauss_constraints, tiny)
        assert err.value.trace is not None
        assert len(err.value.trace.iterations) == 1

    def test_refined_beats_thick_contrast(self, gauss, gauss_constraints,
                                          gauss_refined):
        from plenoptiforge.eval_sim import linewidth_sweep
        design, _ = gauss_refined
        thick = pf.thick_lens_design(gauss_constraints, gauss)
        mean = lambda rows: np.nanmean([c for _, c in rows])
        c_refined = mean(linewidth_sweep(design, n_steps=8, on_error="nan"))
        c_thick = mean(linewidth_sweep(thick, n_steps=8, on_error="nan"))
        assert c_refined > c_thick


class TestDofMatch:
    def test_requires_target(self, biconvex):
        cons = pf.DesignConstraints(a_main=1000.0, gamma=0.4, f_ml=1.5,
                                    d_ml=0.4, sensor=SENSOR)
        with pytest.raises(ValidationError):
            pf.dof_match(cons, biconvex)

    def test_zero_outer_iterations_when_already_matched(self, biconvex):
        # measure the DoF the pipeline itself produces at the target center,
        # then ask for exactly that interval with a threshold that absorbs
        # the center offset of the re-centered first build
        probe_target = DofInterval(900.0, 1100.0)
        cons = pf.DesignConstraints(a_main=1000.0, gamma=0.4, f_ml=1.5,
                                    d_ml=0.4, sensor=SENSOR,
                                    dof_target=probe_target)
        seed = pf.thick_lens_design(cons, biconvex)
        refined, _ = pf.refine(seed, cons)
        dof0 = pf.camera_dof(refined, 0)

        cons2 = dataclasses.replace(cons, dof_target=dof0)
        design, trace = pf.dof_match(cons2, biconvex,
                                     threshold=0.25 * dof0.width)
        assert trace.converged
        assert len(trace.iterations) == 1     # zero modification rounds

    def test_halved_target_width_needs_larger_pitch(self, biconvex):
        base = DofInterval(900.0, 1150.0)
        cons = pf.DesignConstraints(a_main=1000.0, gamma=0.4, f_ml=1.5,
                                    d_ml=0.4, sensor=SENSOR, dof_target=base)
        settings_ = pf.RefineSettings(max_outer_iters=12)
        d1, _ = pf.dof_match(cons, biconvex, settings_, threshold=20.0)
        half = DofInterval(base.center - base.width / 4,
                           base.center + base.width / 4)
        cons2 = dataclasses.replace(cons, dof_target=half)
        d2, _ = pf.dof_match(cons2, biconvex, settings_, threshold=20.0)
        assert d2.mla.d_ml > d1.mla.d_ml

    def test_final_focus_inside_target(self, biconvex):
        target = DofInterval(900.0, 1150.0)
        cons = pf.DesignConstraints(a_main=1000.0, gamma=0.4, f_ml=1.5,
                                    d_ml=0.4, sensor=SENSOR, dof_target=target)
        design, trace = pf.dof_match(cons, biconvex,
                                     pf.RefineSettings(max_outer_iters=15),
                                     threshold=20.0)
        assert target.delta_min <= design.a_main <= target.delta_max

    def test_budget_exhaustion_raises_with_trace(self, biconvex):
        cons = pf.DesignConstraints(a_main=1000.0, gamma=0.4, f_ml=1.5,
                                    d_ml=0.4, sensor=SENSOR,
                                    dof_target=DofInterval(900.0, 1150.0))
        tiny = pf.RefineSettings(max_outer_iters=1)
        with pytest.raises(NoConvergenceError) as err:
            pf.dof_match(cons, biconvex, tiny, threshold=1e-6)
        assert err.value.trace is not None
        assert len(err.value.trace.iterations) >= 1
