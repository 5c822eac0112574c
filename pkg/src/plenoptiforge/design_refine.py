"""Ray-tracing-based refinement of the MLA distances and main aperture,
plus the meta-optimization matching a preset depth-of-field interval.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np

from .design_paraxial import (DesignConstraints, _solve_mla_distances,
                              thick_lens_design)
from .errors import (InsufficientClustersError, NoConvergenceError,
                     NoFocusError, ValidationError)
from .measurements import (DEFAULT_ALPHA, best_visual_focus, camera_dof,
                           measure_disparity, measure_magnification,
                           mli_overlap, visible_mli_size, _min_blur_z)
from .optics_core import (CameraDesign, LensPrescription, _fan_arrays,
                          _main_chain_cached, _propagate_to_plane,
                          _trace_chain, default_bundle_size)


@dataclass(frozen=True)
class RefineSettings:
    """Tolerances and step policy for the refinement loops.

    None defaults are resolved against the design at hand: eps_focus to
    0.1 * pixel_size, eps_mli to pixel_size, step_init to 0.05 * f_ml and
    n_rays_focus to the global bundle size.  The disparity bundle is denser
    than the default because the tolerance on the traced coefficient is
    tighter than the cluster-mean quantization of a 255-ray bundle.

    outer_repeats re-runs the focus/distance/aperture stages once the
    aperture has settled; one repeat is the default because the traced
    disparity of strongly aberrated lenses shifts by up to ~0.03 when the
    aperture changes, which a single pass cannot absorb.
    """

    eps_gamma: float = 0.005
    eps_focus: float | None = None
    eps_mli: float | None = None
    max_iters: int = 200
    step_init: float | None = None
    damping: float = 0.5
    alpha: float = DEFAULT_ALPHA
    n_rays_disparity: int = 1023
    n_rays_focus: int | None = None
    outer_repeats: int = 1
    max_outer_iters: int = 25

    def __post_init__(self):
        for name in ("eps_gamma", "eps_focus", "eps_mli", "step_init"):
            v = getattr(self, name)
            if v is not None and not (v > 0):
                raise ValidationError(f"{name} must be > 0")
        if self.max_iters < 1 or self.max_outer_iters < 1:
            raise ValidationError("iteration budgets must be >= 1")
        if not (0 < self.damping < 1):
            raise ValidationError("damping must lie in (0, 1)")

    def resolved(self, design: CameraDesign) -> "RefineSettings":
        return replace(
            self,
            eps_focus=self.eps_focus if self.eps_focus is not None
            else 0.1 * design.sensor.pixel_size,
            eps_mli=self.eps_mli if self.eps_mli is not None
            else design.sensor.pixel_size,
            step_init=self.step_init if self.step_init is not None
            else 0.05 * design.mla.f_ml,
            n_rays_focus=self.n_rays_focus if self.n_rays_focus is not None
            else default_bundle_size(),
        )


RefineStep = namedtuple(
    "RefineStep", "a_ml b_ml d_main gamma_tilde b_ml_tilde d_vis")

DofMatchStep = namedtuple("DofMatchStep", "d_ml a_main dof_min dof_max")


@dataclass(frozen=True)
class RefineTrace:
    iterations: tuple
    converged: bool


# ---------------------------------------------------------------------------
# Closed-form disparity coefficient and its derivatives
# ---------------------------------------------------------------------------

def disparity_coefficient(b_main, a_ml, b_ml):
    """gamma solved from the disparity constraint on the thin model."""
    return b_ml * b_main / (a_ml * (b_main + a_ml + b_ml))


def gamma_partials(b_main, a_ml, b_ml):
    """Partial derivatives of gamma w.r.t. a_ML and b_ML.

    The first is negative and the second positive for all positive
    arguments, which orients the four refinement actions.  Accepts scalars
    or numpy arrays elementwise.
    """
    s = b_main + a_ml + b_ml
    d_a = -b_ml * b_main * (s + a_ml) / (a_ml * a_ml * s * s)
    d_b = b_main * (b_main + a_ml) / (a_ml * s * s)
    return d_a, d_b


# ---------------------------------------------------------------------------
# Measurement of the MLA-side focus
# ---------------------------------------------------------------------------

def _mla_side_focus(design: CameraDesign, a_main: float, n_rays: int) -> float:
    """Distance from the MLA at which the central lenslet focuses the
    main-lens image of the scene point (minimum-blur criterion)."""
    z, y, dz, dy, alive = _fan_arrays(design.lens, -a_main, 0.0, n_rays,
                                      design.d_main)
    chain = _main_chain_cached(design.lens, design.d_main)
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    z, y, dz, dy, alive = _propagate_to_plane(z, y, dz, dy, alive, design.mla_z)
    sel = alive & (np.abs(y) <= design.mla.d_ml / 2.0)
    if sel.sum() < 3:
        raise NoFocusError("central lenslet receives too few rays")
    u = dy[sel] / dz[sel]
    u2 = u - y[sel] / design.mla.f_ml
    z_star = _min_blur_z(z[sel], y[sel], u2, design.mla_z)
    return z_star - design.mla_z


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def _disparity_probe_aperture(design: CameraDesign,
                              constraints: DesignConstraints,
                              n_rays: int) -> float:
    """Smallest probe aperture (>= the design's) with two usable clusters.

    A matched aperture at high gamma can confine the on-axis bundle to a
    single lenslet; widening only the probe bundle restores the adjacent
    cluster.  The ladder is fine-grained because the measured coefficient
    carries an aberration bias that grows with the probe aperture, so the
    probe should sit as close to the actual aperture as possible.
    """
    d_max = 2.0 * design.lens.surfaces[design.lens.stop_index].semi_aperture
    d = design.d_main
    while True:
        try:
            measure_disparity(design, constraints.a_main, n_rays=n_rays,
                              probe_d_main=d)
            return d
        except InsufficientClustersError:
            if d >= d_max:
                raise
            d = min(d * 1.2, d_max)


def _four_case_loop(design: CameraDesign, constraints: DesignConstraints,
                    s: RefineSettings):
    """Alternate single-parameter steps on a_ML / b_ML until the traced
    disparity and the MLA-side focus are within tolerance."""
    gamma_t = constraints.gamma
    cur = design
    steps: list[RefineStep] = []
    step = s.step_init
    prev_sg = prev_sf = 0
    floor = constraints.f_ml * 1.001
    probe_d = _disparity_probe_aperture(design, constraints,
                                        s.n_rays_disparity)

    for _ in range(s.max_iters):
        g_meas = measure_disparity(cur, constraints.a_main,
                                   n_rays=s.n_rays_disparity,
                                   probe_d_main=probe_d)
        b_meas = _mla_side_focus(cur, constraints.a_main, s.n_rays_focus)
        rg = g_meas - gamma_t
        rf = b_meas - cur.b_ml
        steps.append(RefineStep(cur.a_ml, cur.b_ml, cur.d_main,
                                g_meas, b_meas, math.nan))
        g_ok = abs(rg) <= s.eps_gamma
        f_ok = abs(rf) <= s.eps_focus
        if g_ok and f_ok:
            return cur, steps, True

        sg = 1 if rg > 0 else -1
        sf = 1 if rf > 0 else -1
        if (not g_ok and prev_sg and sg != prev_sg) or \
           (not f_ok and prev_sf and sf != prev_sf):
            step *= 0.5
        prev_sg, prev_sf = sg, sf

        # exactly one of the four actions per iteration; when one residual
        # is already inside its tolerance, act only on the other
        if g_ok:
            target, delta = "b_ml", (step if rf > 0 else -step)
        elif f_ok:
            target, delta = "a_ml", (step if rg > 0 else -step)
        elif rg > 0 and rf > 0:
            target, delta = "a_ml", step        # lower gamma, pull focus in
        elif rg > 0 and rf < 0:
            target, delta = "b_ml", -step       # lower gamma, push sensor back
        elif rg < 0 and rf > 0:
            target, delta = "b_ml", step        # raise gamma, reach the focus
        else:
            target, delta = "a_ml", -step       # raise gamma, push focus out

        old = getattr(cur, target)
        new = old + delta
        if new <= floor:
            new = 0.5 * (old + floor)
        cur = replace(cur, **{target: new})

    return cur, steps, False


def _aperture_stage(design: CameraDesign, s: RefineSettings):
    """Bisect d_main until the visible MLI size matches m * d_ML.

    The visible size is monotone in the aperture, so a bracket plus
    bisection suffices.  The tolerance band bounds overlap and coverage
    simultaneously: at most eps_mli of rim sharing, at most eps_mli of
    uncovered sensor.
    """
    eps = s.eps_mli
    d_max = 2.0 * design.lens.surfaces[design.lens.stop_index].semi_aperture

    def classify(dsn):
        m = measure_magnification(dsn)
        target = m * dsn.mla.d_ml
        d_vis = visible_mli_size(dsn, 0, s.alpha)
        if d_vis > target + eps:
            return 1, d_vis
        if d_vis < target - eps:
            return -1, d_vis
        return 0, d_vis

    cur = design
    cls, d_vis = classify(cur)
    if cls == 0:
        return cur, d_vis, True

    lo = hi = cur.d_main
    if cls > 0:
        while cls > 0 and lo > 1e-6:
            hi = lo
            lo /= 1.3
            cls, d_vis = classify(replace(cur, d_main=lo))
        if cls == 0:
            return replace(cur, d_main=lo), d_vis, True
    else:
        while cls < 0 and hi < d_max:
            lo = hi
            hi = min(hi * 1.3, d_max)
            cls, d_vis = classify(replace(cur, d_main=hi))
        if cls == 0:
            return replace(cur, d_main=hi), d_vis, True
        if cls < 0:
            # physical aperture limit reached before full coverage
            return replace(cur, d_main=d_max), d_vis, False

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        cls, d_vis = classify(replace(cur, d_main=mid))
        if cls == 0:
            return replace(cur, d_main=mid), d_vis, True
        if cls > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9 * max(hi, 1.0):
            break
    cand = replace(cur, d_main=lo)
    _, d_vis = classify(cand)
    return cand, d_vis, False


def refine(design: CameraDesign, constraints: DesignConstraints,
           settings: RefineSettings | None = None
           ) -> tuple[CameraDesign, RefineTrace]:
    """Refine a paraxial seed design against traced measurements.

    b_main is replaced by the best-visual focus (using the seed aperture),
    the MLA distances are reseeded in closed form and then tuned by the
    four-case loop; finally the aperture is bisected to the visible-MLI
    target.  Raises NoConvergenceError (carrying the trace) when the loop
    budget is exhausted.
    """
    s = (settings or RefineSettings()).resolved(design)
    cur = design
    all_steps: list[RefineStep] = []
    ap_ok = False

    for rep in range(1 + s.outer_repeats):
        snapshot = cur
        try:
            fr = best_visual_focus(cur.lens, constraints.a_main, cur.d_main,
                                   n_rays=s.n_rays_focus)
            a_ml, b_ml = _solve_mla_distances(fr.b_bv, constraints.gamma,
                                              constraints.f_ml)
            cur = replace(cur, b_main=fr.b_bv, a_ml=a_ml, b_ml=b_ml)
            cur, steps, loop_ok = _four_case_loop(cur, constraints, s)
        except InsufficientClustersError:
            if rep == 0:
                raise
            # At high gamma the matched aperture can confine the on-axis
            # bundle to a single lenslet; re-tuning at that aperture is
            # then impossible and the previous pass stands.
            cur = snapshot
            break
        all_steps.extend(steps)
        if not loop_ok:
            raise NoConvergenceError(
                f"four-case loop did not converge in {s.max_iters} iterations",
                trace=RefineTrace(tuple(all_steps), False))

        cur, d_vis, ap_ok = _aperture_stage(cur, s)
        # the trace records the state the loop converged at, plus the
        # aperture the bisection settled on
        last = all_steps[-1]
        all_steps.append(RefineStep(cur.a_ml, cur.b_ml, cur.d_main,
                                    last.gamma_tilde, last.b_ml_tilde, d_vis))

    return cur, RefineTrace(tuple(all_steps), ap_ok)


# ---------------------------------------------------------------------------
# DoF meta-optimization
# ---------------------------------------------------------------------------

def dof_match(constraints: DesignConstraints, lens: LensPrescription,
              settings: RefineSettings | None = None,
              threshold: float | None = None
              ) -> tuple[CameraDesign, RefineTrace]:
    """Match the camera DoF to the preset interval by tuning d_ML and a_main.

    The scene point starts at the center of the target range; each outer
    iteration rescales d_ML (damped, multiplicative) to match the DoF width
    and shifts a_main (damped, additive) to match the DoF center, re-running
    the full refinement after every change.  Default per-endpoint threshold
    is one thousandth of the respective target bound.
    """
    if constraints.dof_target is None:
        raise ValidationError("dof_match requires constraints.dof_target")
    s = settings or RefineSettings()
    tgt = constraints.dof_target
    thr_lo = threshold if threshold is not None else tgt.delta_min / 1000.0
    thr_hi = threshold if threshold is not None else tgt.delta_max / 1000.0

    a_main = tgt.center
    d_ml = constraints.d_ml
    d_ml_floor = 3.0 * constraints.sensor.pixel_size

    def build(a_main_, d_ml_):
        cons = replace(constraints, a_main=a_main_, d_ml=d_ml_)
        seed = thick_lens_design(cons, lens)
        refined, _ = refine(seed, cons, s)
        return refined

    cur = build(a_main, d_ml)
    dof = camera_dof(cur, 0, s.alpha)
    entries: list[DofMatchStep] = []

    for _ in range(s.max_outer_iters):
        entries.append(DofMatchStep(d_ml, a_main, dof.delta_min, dof.delta_max))
        if (abs(dof.delta_min - tgt.delta_min) <= thr_lo
                and abs(dof.delta_max - tgt.delta_max) <= thr_hi):
            return cur, RefineTrace(tuple(entries), True)

        # (i) a larger pitch gives a larger aperture and a smaller DoF
        d_ml = max(d_ml * (dof.width / tgt.width) ** s.damping, d_ml_floor)
        cur = build(a_main, d_ml)
        dof = camera_dof(cur, 0, s.alpha)

        # (ii) shift the focused distance toward the target center
        a_main = a_main + s.damping * (tgt.center - dof.center)
        cur = build(a_main, d_ml)
        dof = camera_dof(cur, 0, s.alpha)

    entries.append(DofMatchStep(d_ml, a_main, dof.delta_min, dof.delta_max))
    raise NoConvergenceError(
        f"DoF matching did not converge in {s.max_outer_iters} outer iterations",
        trace=RefineTrace(tuple(entries), False))
