"""Ray-tracing-based measurements of a plenoptic camera setup.

Covers focus points (paraxial / minimum blur / best visual), MLA-to-sensor
magnification, visible microlens-image size, the disparity coefficient of
an on-axis scene point, and per-pixel / whole-camera depth of field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as _replace_dataclass
from typing import Sequence

import numpy as np

from .errors import (DarkPixelError, EmptyDofError, InsufficientClustersError,
                     NoFocusError, RayBlockedError, ValidationError)
from .optics_core import (CameraDesign, LensPrescription, Ray2D,
                          _build_chain, _camera_trace_arrays, _fan_arrays,
                          _main_chain_cached, _mirror_chain_cached,
                          _pack_rays, _propagate_to_plane, _trace_chain,
                          default_bundle_size)

DEFAULT_ALPHA = math.radians(40.0)
"""Angular response threshold of the sensor (no figure given in the
literature for the abstracted pixel model; configurable per run)."""

BEST_VISUAL_COEFF = 0.531 / 1.5


@dataclass(frozen=True)
class FocusReport:
    """The three focus distances behind the last lens vertex."""

    b_parax: float
    b_blur: float
    b_bv: float


@dataclass(frozen=True)
class DofInterval:
    """Scene distances [delta_min, delta_max] imaged with sub-pixel blur."""

    delta_min: float
    delta_max: float

    def __post_init__(self):
        if not (0 < self.delta_min <= self.delta_max):
            raise ValidationError(
                f"invalid DoF interval [{self.delta_min}, {self.delta_max}]")

    @property
    def width(self) -> float:
        return self.delta_max - self.delta_min

    @property
    def center(self) -> float:
        return 0.5 * (self.delta_min + self.delta_max)


def intersect_dof(intervals: Sequence[DofInterval]) -> DofInterval:
    """[max of minima, min of maxima]; raises EmptyDofError when empty."""
    if not intervals:
        raise EmptyDofError("no intervals to intersect")
    lo = max(i.delta_min for i in intervals)
    hi = min(i.delta_max for i in intervals)
    if lo > hi:
        raise EmptyDofError(f"empty intersection [{lo:.6g}, {hi:.6g}]")
    return DofInterval(lo, hi)


# ---------------------------------------------------------------------------
# Focus measurements
# ---------------------------------------------------------------------------

def paraxial_focus(lens: LensPrescription, a_main: float,
                   d_main: float | None = None) -> float:
    """Axis crossing of near-axis rays, measured from the last lens vertex."""
    sa1 = lens.surfaces[0].semi_aperture
    h = 1e-3 * sa1
    rays = []
    for hh in (h, -h):
        norm = math.hypot(a_main, hh)
        rays.append(Ray2D(-a_main, 0.0, a_main / norm, hh / norm))
    z, y, dz, dy, alive = _pack_rays(rays)
    chain = _main_chain_cached(lens, d_main)
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    if not alive.all():
        raise NoFocusError("near-axis probe rays were blocked")
    u = dy / dz
    if np.any(np.abs(u) < 1e-15) or np.any(u * y >= 0):
        raise NoFocusError("image-space rays do not converge (virtual image)")
    crossings = z - y / u
    return float(np.mean(crossings)) - lens.length


def _min_blur_z(z: np.ndarray, y: np.ndarray, u: np.ndarray,
                z_min: float) -> float:
    """Axial position minimizing the bundle envelope diameter.

    The envelope of a finite bundle is piecewise linear, so the (convex)
    diameter attains its minimum at a pairwise ray crossing; evaluating at
    every crossing plus the lower endpoint is exact.
    """
    q = y - u * z                      # heights extrapolated to z = 0
    du = u[:, None] - u[None, :]
    dq = q[None, :] - q[:, None]
    iu, ju = np.triu_indices(len(u), k=1)
    du_p = du[iu, ju]
    dq_p = dq[iu, ju]
    good = np.abs(du_p) > 1e-14
    crossings = dq_p[good] / du_p[good]
    crossings = crossings[crossings >= z_min - 1e-9]
    if crossings.size == 0:
        raise NoFocusError("ray bundle has no forward crossings (diverging)")
    candidates = np.sort(np.append(crossings, z_min))
    best_z = candidates[0]
    best_d = math.inf
    chunk = 4096
    for k in range(0, candidates.size, chunk):
        zc = candidates[k:k + chunk]
        heights = q[None, :] + u[None, :] * zc[:, None]
        diam = heights.max(axis=1) - heights.min(axis=1)
        i = int(np.argmin(diam))
        if diam[i] < best_d - 1e-15:
            best_d = float(diam[i])
            best_z = float(zc[i])
    return best_z


def bundle_min_blur_z(rays: Sequence[Ray2D], z_min: float = -math.inf) -> float:
    """Minimum-blur axial position of a bundle of image-space rays."""
    live = [r for r in rays if r.alive]
    if len(live) < 2:
        raise NoFocusError("need at least two live rays for a caustic")
    z, y, dz, dy, _ = _pack_rays(live)
    return _min_blur_z(z, y, dy / dz, z_min)


def min_blur_focus(lens: LensPrescription, a_main: float, d_main: float,
                   n_rays: int | None = None) -> float:
    """Caustic minimum of a full-aperture bundle, from the last lens vertex."""
    if n_rays is None:
        n_rays = default_bundle_size()
    z, y, dz, dy, alive = _fan_arrays(lens, -a_main, 0.0, n_rays, d_main)
    chain = _main_chain_cached(lens, d_main)
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    if alive.sum() < 3:
        raise NoFocusError("too few rays survive the aperture")
    u = dy[alive] / dz[alive]
    return _min_blur_z(z[alive], y[alive], u, lens.length) - lens.length


def best_visual_from(b_parax: float, b_blur: float) -> float:
    """Best visual focus from the paraxial and minimum-blur points.

    The empirical image-plane offsets from the paraxial focus are related
    by the fixed ratio 0.531/1.5, which places the best visual point
    between the two measured ones (35.4% of the way toward minimum blur).
    """
    return b_parax + BEST_VISUAL_COEFF * (b_blur - b_parax)


def best_visual_focus(lens: LensPrescription, a_main: float, d_main: float,
                      n_rays: int | None = None) -> FocusReport:
    """All three focus points for the given object distance and aperture."""
    b_parax = paraxial_focus(lens, a_main, d_main)
    b_blur = min_blur_focus(lens, a_main, d_main, n_rays=n_rays)
    return FocusReport(b_parax, b_blur, best_visual_from(b_parax, b_blur))


# ---------------------------------------------------------------------------
# Magnification and visible MLI size
# ---------------------------------------------------------------------------

def measure_magnification(design: CameraDesign, probe_slope: float = 0.005) -> float:
    """MLA-to-sensor magnification m = d_MLI / d_ML.

    A single ray with small nonzero slope starts at the aperture stop center
    and is traced through the remaining lens surfaces.  At the MLA plane it
    is taken to pass exactly through a (virtual) lenslet center, so it
    continues undeviated; the ratio of its sensor height to its MLA height
    is the magnification.
    """
    lens = design.lens
    stop_i = lens.stop_index
    z_stop = lens.vertex_z(stop_i)
    chain = _build_chain(lens, None, start=stop_i + 1)
    norm = math.hypot(1.0, probe_slope)
    z = np.array([z_stop])
    y = np.array([0.0])
    dz = np.array([1.0 / norm])
    dy = np.array([probe_slope / norm])
    alive = np.array([True])
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    z, y, dz, dy, alive = _propagate_to_plane(z, y, dz, dy, alive, design.mla_z)
    if not alive[0]:
        raise RayBlockedError("magnification probe ray was clipped")
    y_mla = float(y[0])
    y_sensor = y_mla + float(dy[0] / dz[0]) * design.b_ml
    return y_sensor / y_mla


def _sensor_to_scene(design: CameraDesign, y_sensor: np.ndarray,
                     angles: np.ndarray, lenslet_index: int):
    """Reverse-trace sensor rays through one lenslet and the main lens.

    ``y_sensor`` and ``angles`` broadcast against each other; angles are
    measured against the sensor normal.  Returns global-frame object-space
    ray arrays (z, y, dz, dy, alive) with dz < 0 for survivors.
    """
    y0, th = np.broadcast_arrays(np.asarray(y_sensor, dtype=float),
                                 np.asarray(angles, dtype=float))
    shape = y0.shape
    y = y0.astype(float).ravel().copy()
    # mirrored frame: zm = -z, forward travel toward the scene
    z = np.full(y.shape, -design.sensor_z)
    dz = np.cos(th).ravel()
    dy = np.sin(th).ravel()
    alive = np.ones(y.shape, dtype=bool)

    z, y, dz, dy, alive = _propagate_to_plane(z, y, dz, dy, alive, -design.mla_z)
    center = lenslet_index * design.mla.d_ml
    alive = alive & (np.abs(y - center) <= design.mla.d_ml / 2.0)
    u = dy / np.where(alive, dz, 1.0)
    u2 = u - (y - center) / design.mla.f_ml
    norm = np.sqrt(1.0 + u2 * u2)
    dz = np.where(alive, 1.0 / norm, dz)
    dy = np.where(alive, u2 / norm, dy)

    chain = _mirror_chain_cached(design.lens, design.d_main)
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    # back to the global frame
    return (-z.reshape(shape), y.reshape(shape), -dz.reshape(shape),
            dy.reshape(shape), alive.reshape(shape))


def _lenslet_angles(design: CameraDesign, y_pixel: float, lenslet_index: int,
                    alpha: float, n_angles: int) -> np.ndarray:
    """Sensor-normal angles within [-alpha, alpha] that can reach the lenslet.

    Rays outside the window defined by the lenslet aperture are blocked at
    the MLA anyway, so the angular stepping concentrates on the window for
    resolution; an empty result means the pixel is geometrically dark.
    """
    center = lenslet_index * design.mla.d_ml
    half = design.mla.d_ml / 2.0
    t_lo = (center - half - y_pixel) / design.b_ml
    t_hi = (center + half - y_pixel) / design.b_ml
    lo = max(math.atan(t_lo), -alpha)
    hi = min(math.atan(t_hi), alpha)
    if lo >= hi:
        return np.empty(0)
    inset = 1e-9 * (hi - lo)
    return np.linspace(lo + inset, hi - inset, n_angles)


def _pixel_is_lit(design: CameraDesign, y_pixel: float, lenslet_index: int,
                  alpha: float, n_angles: int) -> bool:
    angles = _lenslet_angles(design, y_pixel, lenslet_index, alpha, n_angles)
    if angles.size == 0:
        return False
    _, _, _, _, alive = _sensor_to_scene(design, y_pixel, angles, lenslet_index)
    return bool(alive.any())


def mli_lit_pixels(design: CameraDesign, lenslet_index: int = 0,
                   alpha: float = DEFAULT_ALPHA, n_angles: int = 65
                   ) -> np.ndarray:
    """Pixel indices receiving light through the given lenslet.

    Linear search outward from the MLI center, stopping at the first dark
    pixel per direction.  Empty when even the center pixel is dark.
    """
    sensor = design.sensor
    m = measure_magnification(design)
    mli_center = m * lenslet_index * design.mla.d_ml
    center_idx = sensor.pixel_index(mli_center)
    if not (0 <= center_idx < sensor.n_pixels):
        return np.empty(0, dtype=int)
    if not _pixel_is_lit(design, sensor.pixel_center(center_idx),
                         lenslet_index, alpha, n_angles):
        return np.empty(0, dtype=int)
    lit = [center_idx]
    for direction in (+1, -1):
        i = center_idx + direction
        while 0 <= i < sensor.n_pixels:
            if not _pixel_is_lit(design, sensor.pixel_center(i),
                                 lenslet_index, alpha, n_angles):
                break
            lit.append(i)
            i += direction
    return np.array(sorted(lit), dtype=int)


def visible_mli_size(design: CameraDesign, lenslet_index: int = 0,
                     alpha: float = DEFAULT_ALPHA, n_angles: int = 65) -> float:
    """Twice the maximum distance of a light-receiving pixel to the MLI center."""
    if not (0 < alpha < math.pi / 2):
        raise ValidationError("alpha must lie in (0, pi/2)")
    lit = mli_lit_pixels(design, lenslet_index, alpha, n_angles)
    if lit.size == 0:
        return 0.0
    m = measure_magnification(design)
    mli_center = m * lenslet_index * design.mla.d_ml
    ys = np.array([design.sensor.pixel_center(i) for i in lit])
    return 2.0 * float(np.max(np.abs(ys - mli_center)))


def mli_overlap(design: CameraDesign, alpha: float = DEFAULT_ALPHA,
                n_angles: int = 65) -> int:
    """Number of sensor pixels lit through both lenslet 0 and lenslet 1."""
    a = set(mli_lit_pixels(design, 0, alpha, n_angles).tolist())
    b = set(mli_lit_pixels(design, 1, alpha, n_angles).tolist())
    return len(a & b)


# ---------------------------------------------------------------------------
# Disparity
# ---------------------------------------------------------------------------

def measure_disparity(design: CameraDesign, scene_point_distance: float,
                      n_rays: int | None = None,
                      min_cluster_size: int = 5,
                      probe_d_main: float | None = None) -> float:
    """Traced disparity coefficient of an on-axis scene point.

    Sensor hits are clustered by nearest MLI center (pitch m * d_ML); the
    coefficient is (|mu_2 - mu_1| - d_MLI) / d_MLI for the neighboring
    cluster pair closest to the axis.  probe_d_main widens (or narrows)
    the aperture of the probe bundle only; designs whose matched aperture
    confines the on-axis bundle to a single lenslet need a wider probe.
    """
    if n_rays is None:
        n_rays = default_bundle_size()
    if probe_d_main is None:
        probe_d_main = design.d_main
    stop_sa = design.lens.surfaces[design.lens.stop_index].semi_aperture
    probe_d_main = min(probe_d_main, 2.0 * stop_sa)
    probe = design if probe_d_main == design.d_main else \
        _replace_dataclass(design, d_main=probe_d_main)
    z, y, dz, dy, alive = _fan_arrays(design.lens, -scene_point_distance, 0.0,
                                      n_rays, probe.d_main)
    ys, _, _, alive = _camera_trace_arrays(z, y, dz, dy, alive, probe)
    hits = ys[alive]
    m = measure_magnification(design)
    d_mli = m * design.mla.d_ml
    if hits.size < 2 * min_cluster_size:
        raise InsufficientClustersError(
            f"only {hits.size} sensor hits for disparity measurement")
    k = np.rint(hits / d_mli).astype(int)
    raw: list[tuple[float, int]] = []
    for kk in np.unique(k):
        sel = k == kk
        if sel.sum() >= min_cluster_size:
            raw.append((float(hits[sel].mean()), int(sel.sum())))
    # a blob straddling a bin boundary splits in two; re-merge clusters far
    # closer than the MLI pitch (genuine neighbors are at least a pitch apart)
    raw.sort()
    merged: list[tuple[float, int]] = []
    for mean, cnt in raw:
        if merged and mean - merged[-1][0] < 0.5 * d_mli:
            pm, pc = merged[-1]
            merged[-1] = ((pm * pc + mean * cnt) / (pc + cnt), pc + cnt)
        else:
            merged.append((mean, cnt))
    if len(merged) < 2:
        raise InsufficientClustersError(
            f"fewer than two clusters with >= {min_cluster_size} rays")
    means = [mu for mu, _ in merged]
    i0 = int(np.argmin(np.abs(means)))
    if i0 + 1 < len(means):
        mu1, mu2 = means[i0], means[i0 + 1]
    else:
        mu1, mu2 = means[i0 - 1], means[i0]
    return (abs(mu2 - mu1) - d_mli) / d_mli


# ---------------------------------------------------------------------------
# Depth of field
# ---------------------------------------------------------------------------

def _batched_blur(design: CameraDesign, deltas: np.ndarray, ybars: np.ndarray,
                  lenslets: np.ndarray, n_rays: int) -> np.ndarray:
    """Hit-cluster diameters for one scene point per pixel.

    The point for pixel i sits at (z, y) = (-deltas[i], ybars[i]); only
    hits landing under the pixel's own lenslet count toward its blur.
    """
    n_px = deltas.size
    z, y, dz, dy, alive = _fan_arrays(design.lens, -deltas, ybars, n_rays,
                                      design.d_main)
    ys, _, lenslet, alive = _camera_trace_arrays(z, y, dz, dy, alive, design)
    ys = ys.reshape(n_px, n_rays)
    lenslet = lenslet.reshape(n_px, n_rays)
    alive = alive.reshape(n_px, n_rays)
    sel = alive & (lenslet == lenslets[:, None])
    count = sel.sum(axis=1)
    hi = np.where(sel, ys, -np.inf).max(axis=1)
    lo = np.where(sel, ys, np.inf).min(axis=1)
    blur = hi - lo
    blur[count < 2] = np.inf
    return blur


class _MeanRays:
    """Per-pixel mean scene rays, anchored at (pz, py) with direction (ddz, ddy)."""

    def __init__(self, pz, py, ddz, ddy):
        self.pz, self.py, self.ddz, self.ddy = pz, py, ddz, ddy


def _scene_setup(design: CameraDesign, pixel_ys: np.ndarray, alpha: float,
                 n_angles: int):
    """Scene-side bundles for each pixel: mean ray and starting distance.

    Returns (mean_rays, delta0, lenslets, ok) where ok marks pixels whose
    bundle escaped the camera.
    """
    m = measure_magnification(design)
    d_mli = m * design.mla.d_ml
    lenslets = np.rint(pixel_ys / d_mli).astype(int)

    n_px = pixel_ys.size
    y_grid = np.repeat(pixel_ys, n_angles)
    th_grid = np.zeros(n_px * n_angles)
    window_ok = np.zeros(n_px * n_angles, dtype=bool)
    for i in range(n_px):
        win = _lenslet_angles(design, float(pixel_ys[i]), int(lenslets[i]),
                              alpha, n_angles)
        if win.size == n_angles:
            th_grid[i * n_angles:(i + 1) * n_angles] = win
            window_ok[i * n_angles:(i + 1) * n_angles] = True
    ls_grid = np.repeat(lenslets, n_angles)
    # lenslet differs per pixel: trace per unique lenslet to reuse the kernel
    z = np.empty(n_px * n_angles)
    y = np.empty_like(z)
    dz = np.empty_like(z)
    dy = np.empty_like(z)
    alive = np.zeros(z.shape, dtype=bool)
    for ls in np.unique(ls_grid):
        sel = ls_grid == ls
        zz, yy, ddz, ddy, al = _sensor_to_scene(design, y_grid[sel],
                                                th_grid[sel], int(ls))
        z[sel], y[sel], dz[sel], dy[sel], alive[sel] = zz, yy, ddz, ddy, al
    alive &= window_ok

    z = z.reshape(n_px, n_angles)
    y = y.reshape(n_px, n_angles)
    dz = dz.reshape(n_px, n_angles)
    dy = dy.reshape(n_px, n_angles)
    alive = alive.reshape(n_px, n_angles)

    ok = alive.sum(axis=1) >= 2
    w = alive.astype(float)
    cnt = np.maximum(w.sum(axis=1), 1.0)
    # evaluate every scene ray at z = 0 to anchor the mean ray
    y_at0 = np.where(alive, y - z * dy / np.where(alive, dz, 1.0), 0.0)
    py = y_at0.sum(axis=1) / cnt
    pz = np.zeros(n_px)
    ddz = (w * dz).sum(axis=1) / cnt
    ddy = (w * dy).sum(axis=1) / cnt
    norm = np.hypot(ddz, ddy)
    norm[norm == 0] = 1.0
    ddz /= norm
    ddy /= norm

    # average intersection of the scene rays with the mean ray
    denom = ddz[:, None] * dy - ddy[:, None] * dz
    good = alive & (np.abs(denom) > 1e-14)
    s = ((z - pz[:, None]) * dy - (y - py[:, None]) * dz) / np.where(good, denom, 1.0)
    gcnt = np.maximum(good.sum(axis=1), 1.0)
    s_mean = np.where(good, s, 0.0).sum(axis=1) / gcnt
    delta0 = -(pz + s_mean * ddz)
    ok = ok & (good.sum(axis=1) >= 2) & (delta0 > 0)
    return _MeanRays(pz, py, ddz, ddy), delta0, lenslets, ok


def _march_boundary(design, mean_rays, lenslets, start, outward: bool,
                    pixel_size: float, n_rays: int, step_frac: float,
                    refine_frac: float, max_distance: float,
                    active_in: np.ndarray):
    """Geometric march + bisection for one DoF boundary of many pixels."""
    factor = 1.0 + step_frac if outward else 1.0 / (1.0 + step_frac)
    floor = 1e-6
    cur = start.copy()          # last known in-focus distance
    probe = cur * factor
    active = active_in.copy()
    bracket_lo = cur.copy()
    bracket_hi = cur.copy()
    has_bracket = np.zeros(cur.shape, dtype=bool)

    max_rounds = 4000
    for _ in range(max_rounds):
        inside = active & (probe <= max_distance) & (probe >= floor)
        # pixels whose probe left the allowed range: boundary capped there
        capped = active & ~inside
        cur[capped] = np.clip(probe[capped], floor, max_distance)
        active = inside
        if not active.any():
            break
        blur = np.full(cur.shape, np.inf)
        blur[active] = _batched_blur(design, probe[active],
                                     _eval_ybar(mean_rays, probe, active),
                                     lenslets[active], n_rays)
        in_focus = blur <= pixel_size
        adv = active & in_focus
        cur[adv] = probe[adv]
        probe[adv] = probe[adv] * factor
        done = active & ~in_focus
        bracket_lo[done] = np.minimum(cur[done], probe[done])
        bracket_hi[done] = np.maximum(cur[done], probe[done])
        has_bracket[done] = True
        active = adv

    # bisection refinement of bracketed boundaries
    refine = has_bracket.copy()
    for _ in range(80):
        gap = (bracket_hi - bracket_lo) / np.maximum(bracket_lo, floor)
        refine = refine & (gap > refine_frac)
        if not refine.any():
            break
        mid = 0.5 * (bracket_lo + bracket_hi)
        blur = np.full(cur.shape, np.inf)
        blur[refine] = _batched_blur(design, mid[refine],
                                     _eval_ybar(mean_rays, mid, refine),
                                     lenslets[refine], n_rays)
        in_focus = blur <= pixel_size
        if outward:
            take_lo = refine & in_focus
            take_hi = refine & ~in_focus
        else:
            take_lo = refine & ~in_focus
            take_hi = refine & in_focus
        bracket_lo[take_lo] = mid[take_lo]
        bracket_hi[take_hi] = mid[take_hi]

    out = cur.copy()
    sel = has_bracket
    out[sel] = bracket_lo[sel] if outward else bracket_hi[sel]
    return out


def _eval_ybar(mean_rays: _MeanRays, deltas: np.ndarray, mask: np.ndarray):
    t = (-deltas[mask] - mean_rays.pz[mask]) / mean_rays.ddz[mask]
    return mean_rays.py[mask] + t * mean_rays.ddy[mask]


def _dof_intervals(design: CameraDesign, pixel_ys: np.ndarray,
                   alpha: float, n_scene_angles: int, n_blur_rays: int,
                   step_frac: float, refine_frac: float,
                   max_distance: float) -> list[DofInterval | None]:
    pixel_ys = np.asarray(pixel_ys, dtype=float)
    mean_rays, delta0, lenslets, ok = _scene_setup(design, pixel_ys, alpha,
                                                   n_scene_angles)
    n_px = pixel_ys.size
    blur0 = np.full(n_px, np.inf)
    if ok.any():
        blur0[ok] = _batched_blur(design, delta0[ok],
                                  _eval_ybar(mean_rays, delta0, ok),
                                  lenslets[ok], n_blur_rays)
    in0 = blur0 <= design.sensor.pixel_size

    # recovery: starting point out of focus -> scan a small bracket for one
    needs = ok & ~in0
    if needs.any():
        ratios = (1.0 + step_frac) ** np.arange(-40, 41)
        for i in np.where(needs)[0]:
            cands = delta0[i] * ratios
            mask = np.ones(cands.shape, dtype=bool)
            lens_i = np.full(cands.shape, lenslets[i])
            mr = _MeanRays(np.full(cands.shape, mean_rays.pz[i]),
                           np.full(cands.shape, mean_rays.py[i]),
                           np.full(cands.shape, mean_rays.ddz[i]),
                           np.full(cands.shape, mean_rays.ddy[i]))
            blur = _batched_blur(design, cands, _eval_ybar(mr, cands, mask),
                                 lens_i, n_blur_rays)
            focus_idx = np.where(blur <= design.sensor.pixel_size)[0]
            if focus_idx.size:
                pick = focus_idx[np.argmin(np.abs(focus_idx - 40))]
                delta0[i] = cands[pick]
                in0[i] = True

    usable = ok & in0
    hi = _march_boundary(design, mean_rays, lenslets, delta0, True,
                         design.sensor.pixel_size, n_blur_rays, step_frac,
                         refine_frac, max_distance, usable)
    lo = _march_boundary(design, mean_rays, lenslets, delta0, False,
                         design.sensor.pixel_size, n_blur_rays, step_frac,
                         refine_frac, max_distance, usable)

    out: list[DofInterval | None] = []
    for i in range(n_px):
        if not usable[i] or not (0 < lo[i] <= hi[i]):
            out.append(None)
        else:
            out.append(DofInterval(float(lo[i]), float(hi[i])))
    return out


def pixel_dof(design: CameraDesign, pixel_y: float,
              alpha: float = DEFAULT_ALPHA, n_scene_angles: int = 33,
              n_blur_rays: int = 49, step_frac: float = 0.01,
              refine_frac: float = 5e-4, max_distance: float = 1e7
              ) -> DofInterval:
    """Depth of field of a single sensor pixel.

    The pixel's scene bundle defines a mean ray; scene points are marched
    along it in both directions (geometric steps, then bisection of the
    boundary) until the reverse-traced hit cluster under the pixel's
    lenslet exceeds one pixel in diameter.
    """
    res = _dof_intervals(design, np.array([pixel_y]), alpha, n_scene_angles,
                         n_blur_rays, step_frac, refine_frac, max_distance)
    if res[0] is None:
        raise DarkPixelError(
            f"pixel at y={pixel_y:.4g} sees no usable scene bundle")
    return res[0]


def camera_dof(design: CameraDesign, mli_index: int = 0,
               alpha: float = DEFAULT_ALPHA, n_scene_angles: int = 33,
               n_blur_rays: int = 49, step_frac: float = 0.01,
               refine_frac: float = 5e-4, max_distance: float = 1e7,
               return_per_pixel: bool = False):
    """DoF of the camera: intersection over the lit pixels of one MLI.

    Per-pixel intervals are available via ``return_per_pixel`` as a
    diagnostic of the DoF variance within a microlens image.
    """
    lit = mli_lit_pixels(design, mli_index, alpha)
    if lit.size == 0:
        raise EmptyDofError(f"MLI {mli_index} receives no light")
    ys = np.array([design.sensor.pixel_center(i) for i in lit])
    res = _dof_intervals(design, ys, alpha, n_scene_angles, n_blur_rays,
                         step_frac, refine_frac, max_distance)
    intervals = [r for r in res if r is not None]
    if not intervals:
        raise EmptyDofError(f"no pixel of MLI {mli_index} has a usable DoF")
    combined = intersect_dof(intervals)
    if return_per_pixel:
        return combined, dict(zip(lit.tolist(), res))
    return combined
