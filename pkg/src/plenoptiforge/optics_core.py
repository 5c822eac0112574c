"""Geometric primitives and a deterministic 2D sequential ray tracer.

The meridional plane is parameterized by (z, y): z is the optical axis
pointing from the scene into the camera, y is the height above the axis.
The global frame puts z = 0 at the first surface vertex of the main lens,
so scene points sit at negative z and the sensor at positive z.  All axial
camera distances (b_main, a_ML, b_ML) are measured from the *last* surface
vertex of the main lens.

Everything here is pure: rays and system descriptions are immutable values
and tracing the same inputs yields bit-identical results.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import DesignGeometryError, ValidationError

PLANAR = math.inf
"""Sentinel curvature radius for a flat surface."""

DEFAULT_BUNDLE_SIZE = 255

_EPS_T = 1e-9          # tolerance for intersections at zero-thickness gaps
_MIN_FORWARD_DZ = 1e-12


def default_bundle_size() -> int:
    """Ray count used by measurement bundles; PLENOPTIFORGE_RAYS overrides."""
    raw = os.environ.get("PLENOPTIFORGE_RAYS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValidationError(f"PLENOPTIFORGE_RAYS is not an integer: {raw!r}")
        if n < 3:
            raise ValidationError("PLENOPTIFORGE_RAYS must be at least 3")
        return n
    return DEFAULT_BUNDLE_SIZE


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Surface:
    """One refracting surface of the main lens.

    ``curvature_radius`` is signed (positive center of curvature lies toward
    the image side); ``PLANAR`` (inf) denotes a flat surface.
    ``refractive_index_after`` is the medium between this surface and the
    next.  ``ideal_focal_length``, when set, turns the surface into an
    aberration-free thin-lens plane (used for reference systems in tests
    and thin-model seeds); such a surface must not change the medium.
    """

    curvature_radius: float
    thickness_to_next: float
    refractive_index_after: float
    semi_aperture: float
    is_stop: bool = False
    ideal_focal_length: float | None = None

    def __post_init__(self):
        if not (self.semi_aperture > 0):
            raise ValidationError("semi_aperture must be > 0")
        if self.thickness_to_next < 0:
            raise ValidationError("thickness_to_next must be >= 0")
        if self.refractive_index_after < 1:
            raise ValidationError("refractive_index_after must be >= 1")
        if self.curvature_radius != PLANAR and self.curvature_radius == 0:
            raise ValidationError("curvature_radius must be nonzero or PLANAR")
        if self.ideal_focal_length is not None and self.ideal_focal_length == 0:
            raise ValidationError("ideal_focal_length must be nonzero")

    @property
    def is_planar(self) -> bool:
        return math.isinf(self.curvature_radius)


@dataclass(frozen=True)
class LensPrescription:
    """Ordered surface list defining the main lens, object side first."""

    surfaces: tuple[Surface, ...]
    name: str = ""
    focal_length_nominal: float | None = None

    def __post_init__(self):
        if not self.surfaces:
            raise ValidationError("prescription needs at least one surface")
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        if sum(1 for s in self.surfaces if s.is_stop) > 1:
            raise ValidationError("at most one surface may be flagged as stop")
        if abs(self.surfaces[-1].refractive_index_after - 1.0) > 1e-9:
            raise ValidationError("image space must be air (last index 1.0)")
        if not math.isfinite(self.length):
            raise ValidationError("cumulative thickness must be finite")

    @property
    def length(self) -> float:
        """Axial distance from first to last surface vertex."""
        return float(sum(s.thickness_to_next for s in self.surfaces[:-1]))

    @property
    def stop_index(self) -> int:
        """Index of the aperture stop.

        Falls back to the surface with the smallest semi-aperture when no
        surface is flagged (prescriptions from the literature often omit
        the stop marker).
        """
        for i, s in enumerate(self.surfaces):
            if s.is_stop:
                return i
        return min(range(len(self.surfaces)),
                   key=lambda i: self.surfaces[i].semi_aperture)

    def vertex_z(self, index: int) -> float:
        """Global z of the given surface vertex."""
        return float(sum(s.thickness_to_next for s in self.surfaces[:index]))


def ideal_thin_lens(focal_length: float, semi_aperture: float,
                    name: str = "ideal-thin") -> LensPrescription:
    """Aberration-free single-plane lens (reference system)."""
    surf = Surface(curvature_radius=PLANAR, thickness_to_next=0.0,
                   refractive_index_after=1.0, semi_aperture=semi_aperture,
                   is_stop=True, ideal_focal_length=focal_length)
    return LensPrescription((surf,), name=name, focal_length_nominal=focal_length)


def thin_singlet(focal_length: float, semi_aperture: float, n: float = 1.5,
                 thickness: float = 0.0, name: str = "singlet") -> LensPrescription:
    """Symmetric biconvex singlet from the lensmaker's equation.

    1/f = (n-1)(1/R - 1/(-R)) gives R = 2 f (n-1).
    """
    r = 2.0 * focal_length * (n - 1.0)
    s1 = Surface(r, thickness, n, semi_aperture, is_stop=True)
    s2 = Surface(-r, 0.0, 1.0, semi_aperture)
    return LensPrescription((s1, s2), name=name, focal_length_nominal=focal_length)


@dataclass(frozen=True)
class Ray2D:
    """Meridional ray: position (z, y), unit direction (dz, dy)."""

    z: float
    y: float
    dz: float
    dy: float
    alive: bool = True

    def __post_init__(self):
        norm = self.dz * self.dz + self.dy * self.dy
        if abs(norm - 1.0) > 1e-12:
            raise ValidationError("ray direction must be a unit vector")

    @classmethod
    def from_slope(cls, z: float, y: float, u: float, forward: bool = True) -> "Ray2D":
        """Ray through (z, y) with slope u = dy/dz; direction sign via forward."""
        s = 1.0 if forward else -1.0
        norm = math.hypot(1.0, u)
        return cls(z, y, s / norm, s * u / norm)

    @property
    def slope(self) -> float:
        return self.dy / self.dz


@dataclass(frozen=True)
class MlaSpec:
    """Microlens array parameters: identical ideal thin lenslets on a pitch."""

    f_ml: float
    d_ml: float
    model: str = "ideal_thin"

    def __post_init__(self):
        if not (self.f_ml > 0):
            raise ValidationError("f_ml must be > 0")
        if not (self.d_ml > 0):
            raise ValidationError("d_ml must be > 0")
        if self.model != "ideal_thin":
            raise ValidationError(f"unsupported MLA model: {self.model!r}")


@dataclass(frozen=True)
class SensorSpec:
    pixel_size: float
    width: float

    def __post_init__(self):
        if not (self.pixel_size > 0):
            raise ValidationError("pixel_size must be > 0")
        if self.width < self.pixel_size:
            raise ValidationError("sensor must be at least one pixel wide")

    @property
    def n_pixels(self) -> int:
        return int(self.width / self.pixel_size)

    def pixel_centers(self) -> np.ndarray:
        i = np.arange(self.n_pixels, dtype=float)
        return (i + 0.5) * self.pixel_size - self.width / 2.0

    def pixel_center(self, index: int) -> float:
        return (index + 0.5) * self.pixel_size - self.width / 2.0

    def pixel_index(self, y: float) -> int:
        return int(math.floor((y + self.width / 2.0) / self.pixel_size))


@dataclass(frozen=True)
class CameraDesign:
    """Full FPC parameter set (Keplerian ordering).

    a_main: axial distance of the focused scene point in front of the first
    lens vertex.  b_main: distance of the main-lens focus (the virtual image
    the microlenses look at) behind the last lens vertex.  The MLA plane sits
    at b_main + a_ml behind the last vertex and the sensor b_ml behind that.
    """

    lens: LensPrescription
    mla: MlaSpec
    sensor: SensorSpec
    a_main: float
    b_main: float
    a_ml: float
    b_ml: float
    d_main: float

    def __post_init__(self):
        if not (self.a_main > 0):
            raise DesignGeometryError("a_main must be > 0")
        if not (self.a_ml > 0):
            raise DesignGeometryError("a_ml must be > 0 (Keplerian setup)")
        if not (self.b_ml > 0):
            raise DesignGeometryError("b_ml must be > 0")
        if not (self.b_main + self.a_ml > 0):
            raise DesignGeometryError("MLA must sit behind the main lens")
        if not (self.d_main > 0):
            raise DesignGeometryError("d_main must be > 0")
        stop_sa = self.lens.surfaces[self.lens.stop_index].semi_aperture
        if self.d_main > 2.0 * stop_sa * (1 + 1e-9):
            raise DesignGeometryError(
                f"d_main {self.d_main:.6g} exceeds stop aperture {2 * stop_sa:.6g}")

    @property
    def mla_z(self) -> float:
        return self.lens.length + self.b_main + self.a_ml

    @property
    def sensor_z(self) -> float:
        return self.mla_z + self.b_ml


@dataclass(frozen=True, eq=False)
class TraceReport:
    """Sensor hits of one traced bundle with per-ray provenance."""

    hit_y: np.ndarray
    hit_angle: np.ndarray
    hit_source: np.ndarray
    hit_lenslet: np.ndarray
    blocked_count: int

    def __post_init__(self):
        for arr in (self.hit_y, self.hit_angle, self.hit_source, self.hit_lenslet):
            arr.setflags(write=False)

    @property
    def sensor_hits(self) -> list[tuple[float, float, int]]:
        return [(float(y), float(a), int(s))
                for y, a, s in zip(self.hit_y, self.hit_angle, self.hit_source)]

    def __len__(self) -> int:
        return int(self.hit_y.size)


# ---------------------------------------------------------------------------
# Internal tracing machinery (vectorized over rays)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Interface:
    z: float
    radius: float | None          # None = planar
    n_in: float
    n_out: float
    half_aperture: float
    f_thin: float | None = None


def _iface_from_surface(s: Surface, vertex_z: float, n_before: float,
                        half_ap: float | None = None) -> _Interface:
    return _Interface(
        z=vertex_z,
        radius=None if s.is_planar else s.curvature_radius,
        n_in=n_before,
        n_out=s.refractive_index_after,
        half_aperture=s.semi_aperture if half_ap is None else half_ap,
        f_thin=s.ideal_focal_length,
    )


def _build_chain(lens: LensPrescription, d_main: float | None = None,
                 start: int = 0, stop: int | None = None) -> tuple[_Interface, ...]:
    """Forward interface chain for surfaces [start:stop) in the global frame."""
    stop_i = lens.stop_index
    n = 1.0 if start == 0 else lens.surfaces[start - 1].refractive_index_after
    chain = []
    for i in range(start, len(lens.surfaces) if stop is None else stop):
        s = lens.surfaces[i]
        half = s.semi_aperture
        if d_main is not None and i == stop_i:
            half = min(half, d_main / 2.0)
        chain.append(_iface_from_surface(s, lens.vertex_z(i), n, half))
        n = s.refractive_index_after
    return tuple(chain)


def _build_chain_mirrored(lens: LensPrescription, d_main: float | None = None,
                          start: int = 0, stop: int | None = None) -> tuple[_Interface, ...]:
    """Interface chain for tracing image-to-object in mirrored coordinates.

    The mirrored frame maps z -> -z; a ray traveling toward the scene becomes
    a forward ray there.  Surface k keeps its aperture, flips its curvature
    sign and swaps the media on both sides.
    """
    stop_i = lens.stop_index
    hi = len(lens.surfaces) if stop is None else stop
    chain = []
    for i in range(hi - 1, start - 1, -1):
        s = lens.surfaces[i]
        n_obj = 1.0 if i == 0 else lens.surfaces[i - 1].refractive_index_after
        half = s.semi_aperture
        if d_main is not None and i == stop_i:
            half = min(half, d_main / 2.0)
        radius = None if s.is_planar else -s.curvature_radius
        chain.append(_Interface(z=-lens.vertex_z(i), radius=radius,
                                n_in=s.refractive_index_after, n_out=n_obj,
                                half_aperture=half, f_thin=s.ideal_focal_length))
    return tuple(chain)


def _refract_chunk(z, y, dz, dy, alive, iface: _Interface):
    """Refract a ray array at one interface.  Dead rays keep their state."""
    live = alive & (dz > _MIN_FORWARD_DZ)

    if iface.radius is None:
        t = np.where(live, (iface.z - z) / np.where(live, dz, 1.0), 0.0)
        ok = live & (t >= -_EPS_T)
        zi = z + t * dz
        yi = y + t * dy
        nz = np.full_like(z, -1.0)
        ny = np.zeros_like(z)
    else:
        r = iface.radius
        cz = iface.z + r
        pz = z - cz
        b = pz * dz + y * dy                    # half the linear coefficient
        c = pz * pz + y * y - r * r
        disc = b * b - c
        has_root = live & (disc >= 0.0)
        sq = np.sqrt(np.where(has_root, disc, 0.0))
        t = (-b - sq) if r > 0 else (-b + sq)
        ok = has_root & (t >= -_EPS_T)
        zi = z + t * dz
        yi = y + t * dy
        nz = (zi - cz) / r                      # unit normal, anti-forward at vertex
        ny = yi / r

    ok = ok & (np.abs(yi) <= iface.half_aperture)

    if iface.f_thin is not None:
        # Ideal thin-lens plane: slope transfer u' = u - y/f, height unchanged.
        u = dy / np.where(ok, dz, 1.0)
        u2 = u - yi / iface.f_thin
        norm = np.sqrt(1.0 + u2 * u2)
        dz2 = 1.0 / norm
        dy2 = u2 / norm
    else:
        eta = iface.n_in / iface.n_out
        ci = -(dz * nz + dy * ny)
        k = 1.0 - eta * eta * (1.0 - ci * ci)
        ok = ok & (k >= 0.0)                    # total internal reflection kills
        sq_k = np.sqrt(np.where(ok, k, 0.0))
        coef = eta * ci - sq_k
        dz2 = eta * dz + coef * nz
        dy2 = eta * dy + coef * ny

    ok = ok & (dz2 > _MIN_FORWARD_DZ)

    z_new = np.where(ok, zi, z)
    y_new = np.where(ok, yi, y)
    dz_new = np.where(ok, dz2, dz)
    dy_new = np.where(ok, dy2, dy)
    alive_new = alive & ok
    return z_new, y_new, dz_new, dy_new, alive_new


def _trace_chain(z, y, dz, dy, alive, chain: Iterable[_Interface]):
    for iface in chain:
        z, y, dz, dy, alive = _refract_chunk(z, y, dz, dy, alive, iface)
    return z, y, dz, dy, alive


def _propagate_to_plane(z, y, dz, dy, alive, z_plane: float):
    t = (z_plane - z) / np.where(alive, dz, 1.0)
    ok = alive & (t >= -_EPS_T) & (dz > _MIN_FORWARD_DZ)
    z_new = np.where(ok, z_plane, z)
    y_new = np.where(ok, y + t * dy, y)
    return z_new, y_new, dz, dy, alive & ok


def _apply_mla(z, y, dz, dy, alive, d_ml: float, f_ml: float):
    """Assign nearest lenslet and apply the thin-lens slope transfer."""
    lenslet = np.rint(y / d_ml)
    centers = lenslet * d_ml
    u = dy / np.where(alive, dz, 1.0)
    u2 = u - (y - centers) / f_ml
    norm = np.sqrt(1.0 + u2 * u2)
    dz_new = np.where(alive, 1.0 / norm, dz)
    dy_new = np.where(alive, u2 / norm, dy)
    return z, y, dz_new, dy_new, alive, lenslet.astype(np.int64)


@lru_cache(maxsize=128)
def _main_chain_cached(lens: LensPrescription, d_main: float | None):
    return _build_chain(lens, d_main)


@lru_cache(maxsize=128)
def _mirror_chain_cached(lens: LensPrescription, d_main: float | None):
    return _build_chain_mirrored(lens, d_main)


def _pack_rays(rays: Sequence[Ray2D]):
    z = np.array([r.z for r in rays], dtype=float)
    y = np.array([r.y for r in rays], dtype=float)
    dz = np.array([r.dz for r in rays], dtype=float)
    dy = np.array([r.dy for r in rays], dtype=float)
    alive = np.array([r.alive for r in rays], dtype=bool)
    return z, y, dz, dy, alive


def _unpack_rays(z, y, dz, dy, alive) -> list[Ray2D]:
    return [Ray2D(float(zi), float(yi), float(dzi), float(dyi), bool(ai))
            for zi, yi, dzi, dyi, ai in zip(z, y, dz, dy, alive)]


def _camera_trace_arrays(z, y, dz, dy, alive, design: CameraDesign):
    """Trace ray arrays through main lens, MLA and sensor plane.

    Returns (y_sensor, angle, lenslet, alive).
    """
    chain = _main_chain_cached(design.lens, design.d_main)
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    z, y, dz, dy, alive = _propagate_to_plane(z, y, dz, dy, alive, design.mla_z)
    half_w = design.sensor.width / 2.0
    alive = alive & (np.abs(y) <= half_w)
    z, y, dz, dy, alive, lenslet = _apply_mla(z, y, dz, dy, alive,
                                              design.mla.d_ml, design.mla.f_ml)
    z, y, dz, dy, alive = _propagate_to_plane(z, y, dz, dy, alive, design.sensor_z)
    alive = alive & (np.abs(y) <= half_w)
    angle = np.arctan2(dy, dz)
    return y, angle, lenslet, alive


# ---------------------------------------------------------------------------
# Entrance pupil and bundle construction
# ---------------------------------------------------------------------------

def entrance_pupil(lens: LensPrescription, d_main: float | None = None
                   ) -> tuple[float, float]:
    """Paraxial entrance pupil (axial position, radius) in the global frame.

    The pupil is the object-space image of the aperture stop through the
    surfaces in front of it, found by reverse-tracing two near-axis rays
    from the stop center.  Falls back to the first surface aperture when
    the pupil is at infinity.
    """
    stop_i = lens.stop_index
    z_stop = lens.vertex_z(stop_i)
    sa = lens.surfaces[stop_i].semi_aperture
    if d_main is not None:
        sa = min(sa, d_main / 2.0)
    if stop_i == 0:
        return z_stop, sa

    chain = _build_chain_mirrored(lens, None, start=0, stop=stop_i)
    n_start = lens.surfaces[stop_i - 1].refractive_index_after
    u0 = 1e-5
    norm = math.hypot(1.0, u0)
    z = np.array([-z_stop, -z_stop])
    y = np.array([0.0, 0.0])
    dz = np.array([1.0 / norm, 1.0 / norm])
    dy = np.array([u0 / norm, -u0 / norm])
    alive = np.array([True, True])
    z, y, dz, dy, alive = _trace_chain(z, y, dz, dy, alive, chain)
    if not alive.all():
        return 0.0, lens.surfaces[0].semi_aperture
    u_out = dy / dz
    if np.any(np.abs(u_out) < 1e-14):
        return 0.0, lens.surfaces[0].semi_aperture
    crossings = z - y / u_out
    z_ep = -float(np.mean(crossings))
    m_pupil = n_start * u0 / float(np.abs(u_out).mean())
    return z_ep, abs(m_pupil) * sa


def aperture_fan(lens: LensPrescription, source_z: float, source_y: float,
                 n_rays: int | None = None, d_main: float | None = None,
                 fill: float = 0.999) -> list[Ray2D]:
    """Fan of rays from a scene point spanning the entrance aperture.

    An odd default count keeps the axial ray in the bundle.
    """
    if n_rays is None:
        n_rays = default_bundle_size()
    z_ep, r_ep = entrance_pupil(lens, d_main)
    if z_ep <= source_z:    # degenerate: pupil behind the source
        z_ep, r_ep = 0.0, lens.surfaces[0].semi_aperture
    heights = np.linspace(-r_ep * fill, r_ep * fill, n_rays)
    dz0 = z_ep - source_z
    rays = []
    for h in heights:
        norm = math.hypot(dz0, h - source_y)
        rays.append(Ray2D(source_z, source_y, dz0 / norm, (h - source_y) / norm))
    return rays


def _fan_arrays(lens: LensPrescription, source_z, source_y, n_rays,
                d_main=None, fill: float = 0.999):
    """Vector form of aperture_fan for scalar or array sources."""
    z_ep, r_ep = entrance_pupil(lens, d_main)
    source_z = np.asarray(source_z, dtype=float)
    source_y = np.asarray(source_y, dtype=float)
    if np.any(z_ep <= source_z):
        z_ep, r_ep = 0.0, lens.surfaces[0].semi_aperture
    heights = np.linspace(-r_ep * fill, r_ep * fill, n_rays)
    z0 = np.broadcast_to(source_z[..., None],
                         source_z.shape + (n_rays,)).ravel()
    y0 = np.broadcast_to(source_y[..., None],
                         source_y.shape + (n_rays,)).ravel()
    h = np.broadcast_to(heights, source_y.shape + (n_rays,)).ravel()
    vz = z_ep - z0
    vy = h - y0
    norm = np.hypot(vz, vy)
    return z0.copy(), y0.copy(), vz / norm, vy / norm, np.ones(z0.shape, dtype=bool)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def refract_at_surface(ray: Ray2D, surface: Surface, surface_vertex_z: float,
                       n_before: float) -> Ray2D:
    """Refract a forward ray at one surface (Snell's law, aperture clipping).

    Blocking (missed surface, aperture clip, total internal reflection) is
    encoded by returning the ray with alive=False; dead rays pass through
    unchanged.
    """
    if not ray.alive:
        return ray
    if ray.dz <= 0:
        raise ValidationError("refract_at_surface expects a forward ray (dz > 0)")
    iface = _iface_from_surface(surface, surface_vertex_z, n_before)
    arrs = _pack_rays([ray])
    out = _refract_chunk(*arrs, iface)
    return _unpack_rays(*out)[0]


def apply_thin_microlens(ray: Ray2D, lens_center_y: float, f_ml: float) -> Ray2D:
    """Ideal thin-lens slope transfer u' = u - (y - center)/f at the MLA plane."""
    if not ray.alive:
        return ray
    u = ray.slope
    u2 = u - (ray.y - lens_center_y) / f_ml
    norm = math.hypot(1.0, u2)
    s = 1.0 if ray.dz > 0 else -1.0
    return Ray2D(ray.z, ray.y, s / norm, s * u2 / norm, True)


def trace_main_lens_only(rays: Sequence[Ray2D], lens: LensPrescription,
                         d_main: float | None = None) -> list[Ray2D]:
    """Trace rays through the main lens only, returning image-space rays."""
    if not rays:
        return []
    arrs = _pack_rays(rays)
    chain = _main_chain_cached(lens, d_main)
    out = _trace_chain(*arrs, chain)
    return _unpack_rays(*out)


def trace_through_camera(rays: Sequence[Ray2D], design: CameraDesign) -> TraceReport:
    """Trace rays through main lens, MLA and sensor into a TraceReport.

    The CameraDesign constructor enforces the Keplerian ordering invariant,
    raising DesignGeometryError for invalid geometry.
    """
    if not rays:
        return TraceReport(np.empty(0), np.empty(0),
                           np.empty(0, dtype=np.int64),
                           np.empty(0, dtype=np.int64), 0)
    z, y, dz, dy, alive = _pack_rays(rays)
    y_s, angle, lenslet, alive = _camera_trace_arrays(z, y, dz, dy, alive, design)
    idx = np.arange(len(rays), dtype=np.int64)
    return TraceReport(
        hit_y=y_s[alive].copy(),
        hit_angle=angle[alive].copy(),
        hit_source=idx[alive],
        hit_lenslet=lenslet[alive].copy(),
        blocked_count=int(len(rays) - alive.sum()),
    )
