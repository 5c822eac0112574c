"""Desk-scale image-formation harness: renders 1D test patterns through a
camera design, applies white-image normalization and scores contrast and
measured disparity on the resulting sensor profiles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (DegenerateRegionError, EdgeNotFoundError,
                     ShapeMismatchError, ValidationError)
from .measurements import measure_magnification
from .optics_core import (CameraDesign, _camera_trace_arrays, entrance_pupil)


def _main_lens_magnification(design: CameraDesign, distance: float) -> float:
    """Scene-to-intermediate-image magnification, principal-plane corrected."""
    from .design_paraxial import principal_planes
    pp = principal_planes(design.lens)
    return (design.b_main - pp.p2) / (distance - pp.p1)

PATTERN_KINDS = ("stripes", "star_radial_profile", "white")

_CHUNK_RAYS = 400_000


@dataclass(frozen=True)
class Pattern1D:
    """Binary 1D test pattern on a scene plane.

    ``period`` is the stripe period in mm on the pattern plane.  A
    star_radial_profile keeps a constant angular period as seen from the
    camera: rescaling it to another distance scales the period
    proportionally, which is what makes its image magnification-invariant.
    ``intensity`` scales the bright level (0 gives a dark pattern).
    """

    kind: str
    period: float
    distance: float
    lateral_extent: float
    intensity: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValidationError(f"unknown pattern kind {self.kind!r}")
        if not (self.period > 0):
            raise ValidationError("period must be > 0")
        if not (self.distance > 0):
            raise ValidationError("distance must be > 0")
        if not (self.lateral_extent > 0):
            raise ValidationError("lateral_extent must be > 0")

    def at_distance(self, distance: float) -> "Pattern1D":
        """Same pattern moved to another plane (star profiles rescale)."""
        if self.kind == "star_radial_profile":
            period = self.period * distance / self.distance
        else:
            period = self.period
        return replace(self, distance=distance, period=period)

    def bright(self, y: np.ndarray) -> np.ndarray:
        """Boolean mask of bright source positions."""
        if self.kind == "white":
            return np.ones(y.shape, dtype=bool)
        # one bright stripe centered on the offset position
        phase = np.mod((y - self.offset) / self.period + 0.25, 1.0)
        return phase < 0.5


@dataclass(frozen=True, eq=False)
class SensorImage1D:
    """Accumulated per-pixel intensities of one exposure."""

    intensities: np.ndarray
    exposure_rays: int

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("intensities must be finite")
        object.__setattr__(self, "intensities", arr)
        arr.setflags(write=False)


def render_pattern(design: CameraDesign, pattern: Pattern1D,
                   rays_per_source: int = 64, sources_per_period: int = 64,
                   jitter_seed: int | None = None) -> SensorImage1D:
    """Render a pattern by forward-tracing cone bundles from its bright points.

    Source points are a deterministic grid (at least ``sources_per_period``
    per stripe period); each emits a fan covering the entrance pupil with a
    10% margin.  Optional seeded jitter displaces sources within their grid
    cell for anti-aliasing experiments.
    """
    if rays_per_source < 32:
        raise ValidationError("rays_per_source must be at least 32")
    sensor = design.sensor
    n_px = sensor.n_pixels
    step = pattern.period / sources_per_period
    n_src = max(int(math.ceil(pattern.lateral_extent / step)), 1)
    ys = (np.arange(n_src) - (n_src - 1) / 2.0) * step
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        ys = ys + rng.uniform(-0.5, 0.5, ys.shape) * step
    ys = ys[pattern.bright(ys)]
    counts = np.zeros(n_px)
    total = 0
    if ys.size and pattern.intensity > 0:
        z_src = -pattern.distance
        z_ep, r_ep = entrance_pupil(design.lens, design.d_main)
        if z_ep <= z_src:
            z_ep, r_ep = 0.0, design.lens.surfaces[0].semi_aperture
        heights = np.linspace(-1.1 * r_ep, 1.1 * r_ep, rays_per_source)
        src_per_chunk = max(_CHUNK_RAYS // rays_per_source, 1)
        for k in range(0, ys.size, src_per_chunk):
            sy = ys[k:k + src_per_chunk]
            y0 = np.repeat(sy, rays_per_source)
            h = np.tile(heights, sy.size)
            vz = z_ep - z_src
            vy = h - y0
            norm = np.hypot(vz, vy)
            z0 = np.full(y0.shape, z_src)
            alive = np.ones(y0.shape, dtype=bool)
            ys_hit, _, _, alive = _camera_trace_arrays(
                z0, y0.copy(), vz / norm, vy / norm, alive, design)
            total += y0.size
            if alive.any():
                idx = np.floor((ys_hit[alive] + sensor.width / 2.0)
                               / sensor.pixel_size).astype(int)
                np.clip(idx, 0, n_px - 1, out=idx)
                counts += np.bincount(idx, minlength=n_px)
    return SensorImage1D(counts * pattern.intensity, total)


def white_image(design: CameraDesign, pattern: Pattern1D,
                rays_per_source: int = 64, sources_per_period: int = 64
                ) -> SensorImage1D:
    """Flat-field exposure with the same plane and sampling as ``pattern``."""
    flat = replace(pattern, kind="white", intensity=1.0)
    return render_pattern(design, flat, rays_per_source, sources_per_period)


def normalize_white(image: SensorImage1D, white: SensorImage1D,
                    floor_frac: float = 0.01) -> SensorImage1D:
    """Per-pixel division by a white exposure; dim pixels are zeroed."""
    a = image.intensities
    w = white.intensities
    if a.shape != w.shape:
        raise ShapeMismatchError(f"image {a.shape} vs white {w.shape}")
    floor = floor_frac * w.max() if w.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(w > floor, a / np.where(w > floor, w, 1.0), 0.0)
    return SensorImage1D(out, image.exposure_rays)


def contrast(region: np.ndarray) -> float:
    """Mean of above-average values minus mean of the rest.

    For a balanced binary region in [0, 1] this reaches the maximum of 1;
    an all-equal region has no above-average side and is rejected.
    """
    vals = np.asarray(region, dtype=float)
    if vals.size == 0:
        raise DegenerateRegionError("empty region")
    mu = vals.mean()
    bright = vals > mu
    if not bright.any():
        raise DegenerateRegionError("all region values are equal")
    return float(vals[bright].mean() - vals[~bright].mean())


def center_mli_region(image: SensorImage1D, design: CameraDesign,
                      border_pixels: int = 2) -> np.ndarray:
    """Pixels of the center MLI with a safety border stripped.

    The border shrinks for very small MLIs so that at least ~80% of the
    image stays in the region.
    """
    m = measure_magnification(design)
    mli_px = m * design.mla.d_ml / design.sensor.pixel_size
    border = min(border_pixels, max(int(mli_px * 0.1), 1))
    half = m * design.mla.d_ml / 2.0 - border * design.sensor.pixel_size
    centers = design.sensor.pixel_centers()
    return image.intensities[np.abs(centers) <= max(half, 0.0)]


def locate_edge_subpixel(intensities: np.ndarray, near_index: int,
                         window: int = 4) -> float:
    """Sub-pixel position of the 50%-crossing closest to ``near_index``."""
    vals = np.asarray(intensities, dtype=float)
    lo = max(near_index - window, 0)
    hi = min(near_index + window + 1, vals.size)
    seg = vals[lo:hi]
    if seg.size < 2 or seg.max() - seg.min() < 1e-12:
        raise EdgeNotFoundError(f"no edge near pixel {near_index}")
    level = 0.5 * (seg.max() + seg.min())
    best = None
    for i in range(seg.size - 1):
        a, b = seg[i] - level, seg[i + 1] - level
        if a == 0.0 and b == 0.0:
            continue
        if a * b <= 0.0:
            frac = a / (a - b) if a != b else 0.0
            pos = lo + i + frac
            if best is None or abs(pos - near_index) < abs(best - near_index):
                best = pos
    if best is None:
        raise EdgeNotFoundError(f"no 50%-crossing near pixel {near_index}")
    return float(best)


def measured_gamma(image: SensorImage1D, design: CameraDesign,
                   edge_pair: tuple[int, int]) -> float:
    """Disparity coefficient from one stripe edge seen in adjacent MLIs.

    The two indices roughly mark the same edge in neighboring MLIs; each is
    refined to sub-pixel accuracy before applying the pixel-distance form
    of the disparity definition.
    """
    p1 = locate_edge_subpixel(image.intensities, edge_pair[0])
    p2 = locate_edge_subpixel(image.intensities, edge_pair[1])
    d_px = abs(p2 - p1)
    m = measure_magnification(design)
    d_mli = m * design.mla.d_ml
    return (d_px * design.sensor.pixel_size - d_mli) / d_mli


def _falling_crossing(vals: np.ndarray, center: int, half_window: int) -> float:
    """Sub-pixel position of the falling 50%-crossing nearest ``center``."""
    lo = max(center - half_window, 0)
    hi = min(center + half_window + 2, vals.size)
    seg = vals[lo:hi]
    if seg.size < 2 or seg.max() - seg.min() < 1e-12:
        raise EdgeNotFoundError(f"no edge near pixel {center}")
    level = 0.5 * (seg.max() + seg.min())
    best = None
    for i in range(seg.size - 1):
        a, b = seg[i] - level, seg[i + 1] - level
        if a >= 0.0 > b or (a > 0.0 >= b):
            pos = lo + i + a / (a - b)
            if best is None or abs(pos - center) < abs(best - center):
                best = pos
    if best is None:
        raise EdgeNotFoundError(f"no falling 50%-crossing near pixel {center}")
    return float(best)


def stripe_edge_gamma(design: CameraDesign, distance: float | None = None,
                      rays_per_source: int = 96, sources_per_period: int = 96
                      ) -> float:
    """Disparity coefficient measured from one stripe edge in adjacent MLIs.

    The pattern phase is chosen so the stripe's falling edge images at
    -gamma/2 MLI diameters inside the center MLI, which puts its
    correspondence at +gamma/2 inside the next MLI; for any gamma in (0, 1]
    both copies stay clear of the MLI rims.  The search windows are
    centered on the chief-ray predictions from the design's own geometry;
    the measured pixel distance feeds the disparity definition.
    """
    if distance is None:
        distance = design.a_main
    m = measure_magnification(design)
    d_mli = m * design.mla.d_ml
    mag_total = _main_lens_magnification(design, distance) \
        * (design.b_ml / design.a_ml)
    # design-implied coefficient, used only to place the search windows
    gamma_dsn = design.b_ml * design.b_main / (
        design.a_ml * (design.b_main + design.a_ml + design.b_ml))
    x_img = -0.5 * gamma_dsn * d_mli
    pat = default_pattern(design, "stripes", distance)
    pat = replace(pat, offset=x_img / mag_total - pat.period / 4.0)
    img = render_pattern(design, pat, rays_per_source, sources_per_period)
    wht = white_image(design, pat, rays_per_source, sources_per_period)
    flat = normalize_white(img, wht)
    p0 = x_img
    p1 = (design.mla.d_ml * (design.a_ml + design.b_ml) / design.a_ml
          + x_img)
    sensor = design.sensor
    half_window = max(5, int(round(0.1 * d_mli / sensor.pixel_size)))
    e0 = _falling_crossing(flat.intensities, sensor.pixel_index(p0), half_window)
    e1 = _falling_crossing(flat.intensities, sensor.pixel_index(p1), half_window)
    return (abs(e1 - e0) * sensor.pixel_size - d_mli) / d_mli


def default_pattern(design: CameraDesign, kind: str, distance: float,
                    periods_across: float = 1.0) -> Pattern1D:
    """Pattern whose image-side period is one MLI pitch at the given distance.

    The scene-side period follows from the two-stage magnification
    (main lens then microlens), so every MLI sees roughly one full period.
    """
    m = measure_magnification(design)
    mag = _main_lens_magnification(design, distance) \
        * (design.b_ml / design.a_ml)
    period = m * design.mla.d_ml / mag / periods_across
    extent = 8.0 * period
    return Pattern1D(kind=kind, period=period, distance=distance,
                     lateral_extent=extent)


def contrast_sweep(design: CameraDesign, distances, pattern_kind: str = "stripes",
                   base_pattern: Pattern1D | None = None,
                   rays_per_source: int = 64, sources_per_period: int = 64,
                   border_pixels: int = 2, normalize: bool = False,
                   on_error: str = "raise", phase_average: int = 3
                   ) -> list[tuple[float, float]]:
    """Center-MLI contrast at each scene distance (sorted ascending).

    Star profiles rescale with distance and therefore probe focus rather
    than magnification.  With ``normalize`` the scores are divided by the
    maximum of the sweep.  A heavily defocused plane renders proportional
    to its white image and the normalized region degenerates to a constant;
    ``on_error="nan"`` records such points as NaN instead of raising.
    """
    distances = list(distances)
    if any(b < a for a, b in zip(distances, distances[1:])):
        raise ValidationError("distances must be sorted ascending")
    if base_pattern is None:
        base_pattern = default_pattern(design, pattern_kind, distances[0])
    rows = []
    for d in distances:
        pat = base_pattern.at_distance(d)
        white = white_image(design, pat, rays_per_source, sources_per_period)
        scores = []
        # phase averaging stands in for the lateral averaging a 2D render
        # provides; a single 1D phase beats against the pixel grid
        for k in range(phase_average):
            ph = replace(pat, offset=pat.offset + pat.period * k / phase_average)
            img = render_pattern(design, ph, rays_per_source, sources_per_period)
            flat = normalize_white(img, white)
            region = center_mli_region(flat, design, border_pixels)
            try:
                scores.append(contrast(region))
            except DegenerateRegionError:
                if on_error == "raise":
                    raise
                scores.append(math.nan)
        rows.append((d, float(np.mean(scores))))
    if normalize:
        peak = max((c for _, c in rows if not math.isnan(c)), default=math.nan)
        rows = [(d, c / peak) for d, c in rows]
    return rows


def linewidth_sweep(design: CameraDesign, widths=None, distance: float | None = None,
                    n_steps: int = 20, rays_per_source: int = 64,
                    sources_per_period: int = 64, border_pixels: int = 2,
                    on_error: str = "raise") -> list[tuple[float, float]]:
    """Center-MLI contrast for stripe patterns of varying line width.

    Line width is half the stripe period.  The default sweep spans from
    near zero up to twice the MLI back-projection at the focus distance,
    the range over which a focused design transitions from unresolved to
    fully resolved stripes.
    """
    if distance is None:
        distance = design.a_main
    if widths is None:
        ref = default_pattern(design, "stripes", distance)
        w_max = ref.period
        widths = [w_max * (i + 1) / n_steps for i in range(n_steps)]
    rows = []
    for w in widths:
        pat = Pattern1D(kind="stripes", period=2.0 * w, distance=distance,
                        lateral_extent=16.0 * w)
        img = render_pattern(design, pat, rays_per_source, sources_per_period)
        white = white_image(design, pat, rays_per_source, sources_per_period)
        flat = normalize_white(img, white)
        region = center_mli_region(flat, design, border_pixels)
        try:
            rows.append((w, contrast(region)))
        except DegenerateRegionError:
            if on_error == "raise":
                raise
            rows.append((w, math.nan))
    return rows


def write_sweep_csv(rows, path) -> None:
    """Sweep results as ``distance_mm,contrast`` CSV."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance_mm", "contrast"])
        for d, c in rows:
            w.writerow([f"{d:.12g}", f"{c:.12g}"])


def write_profile_csv(image: SensorImage1D, path) -> None:
    """Sensor profile as ``pixel_index,intensity`` CSV."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pixel_index", "intensity"])
        for i, v in enumerate(image.intensities):
            w.writerow([i, f"{v:.12g}"])
