"""Closed-form thin-lens camera design and thick-lens corrections.

The thin model fixes b_main by the thin-lens equation and solves the three
design constraints (microlens focus, f-number matching, target disparity)
in closed form.  The thick variant replaces the imaging equation by its
principal-plane-corrected form and the f-number aperture formula by a
single reverse-traced probe ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InfeasibleError, NoFocusError, RayBlockedError, ValidationError
from .measurements import DofInterval
from .optics_core import (CameraDesign, LensPrescription, MlaSpec, SensorSpec,
                          _build_chain_mirrored, _main_chain_cached,
                          _mirror_chain_cached, _refract_chunk, _trace_chain,
                          ideal_thin_lens)


@dataclass(frozen=True)
class DesignConstraints:
    """User targets for a design run.

    gamma is the per-MLI disparity coefficient in (0, 1].  When dof_target
    is set, d_ml is treated as the starting value of a free variable.
    """

    a_main: float
    gamma: float
    f_ml: float
    d_ml: float
    sensor: SensorSpec
    dof_target: DofInterval | None = None

    def __post_init__(self):
        if not (self.a_main > 0):
            raise ValidationError("a_main must be > 0")
        if not (0 < self.gamma <= 1):
            raise ValidationError("gamma must lie in (0, 1]")
        if not (self.f_ml > 0 and self.d_ml > 0):
            raise ValidationError("f_ml and d_ml must be > 0")
        if self.d_ml <= self.sensor.pixel_size:
            raise ValidationError("d_ml must exceed the pixel size")


@dataclass(frozen=True)
class PrincipalPlanes:
    """Signed principal plane offsets of the main lens.

    p1 is measured from the first vertex, positive toward the object, so
    the object-to-front-plane distance is a_main - p1.  p2 is measured from
    the last vertex, positive toward the image, so the back-plane-to-image
    distance is b_main - p2.  Both vanish for a thin lens.
    """

    p1: float
    p2: float

    def __post_init__(self):
        if not (math.isfinite(self.p1) and math.isfinite(self.p2)):
            raise ValidationError("principal planes must be finite")


def _parallel_probe(chain, z0: float, h: float):
    """Trace one axis-parallel near-axis ray; return (crossing_z, efl)."""
    z = np.array([z0])
    y = np.array([h])
    dz = np.array([1.0])
    dy = np.array([0.0])
    alive = np.array([True])
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    if not alive[0]:
        raise NoFocusError("parallel probe ray was blocked")
    u = float(dy[0] / dz[0])
    if abs(u) < 1e-14 or u * h > 0:
        raise NoFocusError("lens has no positive power (afocal or diverging)")
    crossing = float(z[0]) - float(y[0]) / u
    efl = -h / u
    return crossing, efl


def effective_focal_length(lens: LensPrescription) -> float:
    """EFL measured by tracing a near-axis ray parallel to the axis."""
    h = 1e-3 * lens.surfaces[0].semi_aperture
    chain = _main_chain_cached(lens, None)
    _, efl = _parallel_probe(chain, -1.0, h)
    return efl


def principal_planes(lens: LensPrescription) -> PrincipalPlanes:
    """Principal plane offsets from parallel probes traced from each side."""
    h = 1e-3 * min(lens.surfaces[0].semi_aperture,
                   lens.surfaces[-1].semi_aperture)
    back_chain = _main_chain_cached(lens, None)
    crossing_b, efl_b = _parallel_probe(back_chain, -1.0, h)
    bfd = crossing_b - lens.length
    p2 = bfd - efl_b

    front_chain = _mirror_chain_cached(lens, None)
    crossing_f, efl_f = _parallel_probe(front_chain, -lens.length - 1.0, h)
    # mirrored frame: the crossing coordinate equals the front focal distance
    ffd = crossing_f
    p1 = ffd - efl_f
    return PrincipalPlanes(p1, p2)


def _solve_mla_distances(b_main: float, gamma: float, f_ml: float
                         ) -> tuple[float, float]:
    """a_ML and b_ML from the focus and disparity constraints.

    a_ML is the positive root of the quadratic obtained by substituting the
    disparity solution for b_ML into the microlens imaging equation; b_ML
    follows from that solution.
    """
    if b_main <= 0:
        raise InfeasibleError("b_main must be positive (Keplerian)")
    a_ml = -b_main / 2.0 + math.sqrt(f_ml * b_main * (1.0 + gamma) / gamma
                                     + b_main * b_main / 4.0)
    denom = (b_main + a_ml) - (1.0 + gamma) * a_ml
    if denom <= 0:
        raise InfeasibleError("disparity constraint has no positive solution")
    b_ml = gamma * a_ml * (b_main + a_ml) / denom
    return a_ml, b_ml


def thin_lens_design(constraints: DesignConstraints, f_main: float,
                     lens: LensPrescription | None = None) -> CameraDesign:
    """Closed-form design on the thin main-lens model.

    When no prescription is supplied, an aberration-free thin lens of the
    given focal length is synthesized so the design can be traced; passing
    the real prescription stores it for evaluation instead.  d_main is
    clamped to the physical stop aperture when a real lens is attached.
    """
    if constraints.a_main <= f_main:
        raise InfeasibleError(
            f"a_main {constraints.a_main:.6g} <= f_main {f_main:.6g}: no real image")
    b_main = f_main * constraints.a_main / (constraints.a_main - f_main)
    a_ml, b_ml = _solve_mla_distances(b_main, constraints.gamma, constraints.f_ml)
    d_main = constraints.d_ml * (b_main + a_ml) / b_ml
    if lens is None:
        lens = ideal_thin_lens(f_main, semi_aperture=0.75 * d_main)
    else:
        stop_sa = lens.surfaces[lens.stop_index].semi_aperture
        d_main = min(d_main, 2.0 * stop_sa)
    return CameraDesign(
        lens=lens,
        mla=MlaSpec(constraints.f_ml, constraints.d_ml),
        sensor=constraints.sensor,
        a_main=constraints.a_main,
        b_main=b_main,
        a_ml=a_ml,
        b_ml=b_ml,
        d_main=d_main,
    )


def _aperture_probe(lens: LensPrescription, b_main: float, a_ml: float,
                    b_ml: float, d_ml: float) -> float:
    """Aperture diameter from a reverse-traced sensor-edge ray.

    The ray starts at the sensor half a lenslet pitch off axis, passes the
    MLA center undeviated, and is traced backward through the rear lens
    group; twice its height at the stop surface is the aperture diameter.
    """
    z_sensor = lens.length + b_main + a_ml + b_ml
    z_mla = lens.length + b_main + a_ml
    stop_i = lens.stop_index
    # mirrored frame: start at the sensor moving toward the scene
    slope = (0.0 - 0.5 * d_ml) / (z_mla - z_sensor)   # global dy/dz
    u_m = -slope                                      # mirrored frame slope
    norm = math.hypot(1.0, u_m)
    z = np.array([-z_sensor])
    y = np.array([0.5 * d_ml])
    dz = np.array([1.0 / norm])
    dy = np.array([u_m / norm])
    alive = np.array([True])
    chain = _build_chain_mirrored(lens, None, start=stop_i + 1)
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    if not alive[0]:
        raise RayBlockedError("aperture probe ray exited the lens")
    # intersect the stop surface itself, ignoring its aperture edge: a probe
    # landing beyond the physical rim is clamped by the caller
    stop_iface = _build_chain_mirrored(lens, None, start=stop_i,
                                       stop=stop_i + 1)[0]
    stop_iface = replace(stop_iface, half_aperture=math.inf)
    z2, y2, _, _, alive2 = _refract_chunk(z, y, dz, dy, alive, stop_iface)
    if not alive2[0]:
        raise RayBlockedError("aperture probe ray missed the stop surface")
    return 2.0 * abs(float(y2[0]))


def thick_lens_design(constraints: DesignConstraints,
                      lens: LensPrescription) -> CameraDesign:
    """Design with principal-plane-corrected b_main and a ray-traced aperture."""
    pp = principal_planes(lens)
    efl = effective_focal_length(lens)
    a_eff = constraints.a_main - pp.p1
    if a_eff <= efl:
        raise InfeasibleError(
            f"object distance {a_eff:.6g} (principal-plane corrected) "
            f"<= focal length {efl:.6g}")
    b_main = pp.p2 + efl * a_eff / (a_eff - efl)
    a_ml, b_ml = _solve_mla_distances(b_main, constraints.gamma, constraints.f_ml)
    d_main = _aperture_probe(lens, b_main, a_ml, b_ml, constraints.d_ml)
    stop_sa = lens.surfaces[lens.stop_index].semi_aperture
    d_main = min(d_main, 2.0 * stop_sa)
    return CameraDesign(
        lens=lens,
        mla=MlaSpec(constraints.f_ml, constraints.d_ml),
        sensor=constraints.sensor,
        a_main=constraints.a_main,
        b_main=b_main,
        a_ml=a_ml,
        b_ml=b_ml,
        d_main=d_main,
    )
