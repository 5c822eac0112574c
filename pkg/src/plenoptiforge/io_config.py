"""Prescription parsing, design file serialization and the batch runner.

Prescription format (one surface per line, millimeters):

    # comment
    name double_gauss
    efl 99.6
    radius  thickness  index  semi_aperture  [STOP]

``INF`` as radius denotes a planar surface.  Design files are JSON with
numeric fields rounded to 12 significant digits, which makes serialization
round-trip stable and byte-reproducible.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .design_paraxial import DesignConstraints, thick_lens_design, thin_lens_design
from .design_refine import RefineSettings, refine
from .errors import (ParseError, PlenoptiforgeError, SchemaVersionError,
                     ValidationError)
from .eval_sim import linewidth_sweep
from .measurements import (DofInterval, measure_disparity,
                           measure_magnification, camera_dof,
                           visible_mli_size)
from .optics_core import (PLANAR, CameraDesign, LensPrescription, MlaSpec,
                          SensorSpec, Surface)
from .design_paraxial import effective_focal_length

SCHEMA_VERSION = "1"


# ---------------------------------------------------------------------------
# Prescription files
# ---------------------------------------------------------------------------

def parse_prescription(text: str) -> LensPrescription:
    """Parse the tabular surface format into a LensPrescription."""
    surfaces = []
    name = ""
    efl = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        if key == "name":
            name = " ".join(parts[1:])
            continue
        if key == "efl":
            try:
                efl = float(parts[1])
            except (IndexError, ValueError):
                raise ParseError("efl directive needs one number", line=lineno)
            continue
        is_stop = False
        if parts and parts[-1].upper() == "STOP":
            is_stop = True
            parts = parts[:-1]
        if len(parts) != 4:
            raise ParseError(
                f"expected 'radius thickness index semi_aperture [STOP]', got {raw!r}",
                line=lineno)
        try:
            radius = PLANAR if parts[0].upper() == "INF" else float(parts[0])
            thickness = float(parts[1])
            index = float(parts[2])
            semi_ap = float(parts[3])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno)
        surfaces.append(Surface(curvature_radius=radius,
                                thickness_to_next=thickness,
                                refractive_index_after=index,
                                semi_aperture=semi_ap,
                                is_stop=is_stop))
    if not surfaces:
        raise ParseError("no surfaces found")
    return LensPrescription(tuple(surfaces), name=name, focal_length_nominal=efl)


def load_prescription(path) -> LensPrescription:
    lens = parse_prescription(Path(path).read_text())
    if not lens.name:
        lens = replace(lens, name=Path(path).stem)
    return lens


def bundled_lens_names() -> list[str]:
    root = resources.files("plenoptiforge.data")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".lens"))


def bundled_lens(name: str) -> LensPrescription:
    """Load one of the prescriptions shipped with the package."""
    path = resources.files("plenoptiforge.data") / f"{name}.lens"
    if not path.is_file():
        raise ValidationError(
            f"no bundled lens {name!r}; available: {bundled_lens_names()}")
    lens = parse_prescription(path.read_text())
    if not lens.name:
        lens = replace(lens, name=name)
    return lens


def resolve_lens(ref: str) -> LensPrescription:
    """Accept either a file path or a bundled lens name."""
    p = Path(ref)
    if p.is_file():
        return load_prescription(p)
    return bundled_lens(ref)


# ---------------------------------------------------------------------------
# Design files
# ---------------------------------------------------------------------------

def _sig12(x: float) -> float:
    if x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.12g}")


@dataclass(frozen=True)
class Provenance:
    method: str
    tool_version: str = __version__
    timestamp: str = ""
    cli: dict | None = None


@dataclass(frozen=True)
class DerivedMetrics:
    m: float | None = None
    gamma_tilde: float | None = None
    dof: DofInterval | None = None
    d_vis: float | None = None


@dataclass(frozen=True)
class DesignFile:
    design: CameraDesign
    constraints: DesignConstraints
    provenance: Provenance
    derived: DerivedMetrics | None = None
    schema_version: str = SCHEMA_VERSION


def _surface_to_dict(s: Surface) -> dict:
    d = {
        "radius": "INF" if s.is_planar else _sig12(s.curvature_radius),
        "thickness": _sig12(s.thickness_to_next),
        "index": _sig12(s.refractive_index_after),
        "semi_aperture": _sig12(s.semi_aperture),
    }
    if s.is_stop:
        d["stop"] = True
    if s.ideal_focal_length is not None:
        d["ideal_focal_length"] = _sig12(s.ideal_focal_length)
    return d


def _surface_from_dict(d: dict) -> Surface:
    radius = PLANAR if d["radius"] == "INF" else float(d["radius"])
    return Surface(curvature_radius=radius,
                   thickness_to_next=float(d["thickness"]),
                   refractive_index_after=float(d["index"]),
                   semi_aperture=float(d["semi_aperture"]),
                   is_stop=bool(d.get("stop", False)),
                   ideal_focal_length=d.get("ideal_focal_length"))


def serialize_design(df: DesignFile) -> str:
    doc = {
        "schema_version": df.schema_version,
        "units": "mm",
        "lens": {
            "name": df.design.lens.name,
            "focal_length_nominal": df.design.lens.focal_length_nominal,
            "surfaces": [_surface_to_dict(s) for s in df.design.lens.surfaces],
        },
        "design": {
            "a_main": _sig12(df.design.a_main),
            "b_main": _sig12(df.design.b_main),
            "a_ml": _sig12(df.design.a_ml),
            "b_ml": _sig12(df.design.b_ml),
            "d_main": _sig12(df.design.d_main),
            "f_ml": _sig12(df.design.mla.f_ml),
            "d_ml": _sig12(df.design.mla.d_ml),
            "pixel_size": _sig12(df.design.sensor.pixel_size),
            "sensor_width": _sig12(df.design.sensor.width),
        },
        "constraints": {
            "a_main": _sig12(df.constraints.a_main),
            "gamma": _sig12(df.constraints.gamma),
            "f_ml": _sig12(df.constraints.f_ml),
            "d_ml": _sig12(df.constraints.d_ml),
            "pixel_size": _sig12(df.constraints.sensor.pixel_size),
            "sensor_width": _sig12(df.constraints.sensor.width),
            "dof_target": None if df.constraints.dof_target is None else
            [_sig12(df.constraints.dof_target.delta_min),
             _sig12(df.constraints.dof_target.delta_max)],
        },
        "provenance": {
            "method": df.provenance.method,
            "tool_version": df.provenance.tool_version,
            "timestamp": df.provenance.timestamp,
            "cli": df.provenance.cli,
        },
        "derived": None if df.derived is None else {
            "m": None if df.derived.m is None else _sig12(df.derived.m),
            "gamma_tilde": None if df.derived.gamma_tilde is None
            else _sig12(df.derived.gamma_tilde),
            "dof": None if df.derived.dof is None else
            [_sig12(df.derived.dof.delta_min), _sig12(df.derived.dof.delta_max)],
            "d_vis": None if df.derived.d_vis is None else _sig12(df.derived.d_vis),
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_design(text: str) -> DesignFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema_version {version!r}")
    try:
        lens = LensPrescription(
            tuple(_surface_from_dict(d) for d in doc["lens"]["surfaces"]),
            name=doc["lens"].get("name", ""),
            focal_length_nominal=doc["lens"].get("focal_length_nominal"))
        d = doc["design"]
        design = CameraDesign(
            lens=lens,
            mla=MlaSpec(float(d["f_ml"]), float(d["d_ml"])),
            sensor=SensorSpec(float(d["pixel_size"]), float(d["sensor_width"])),
            a_main=float(d["a_main"]), b_main=float(d["b_main"]),
            a_ml=float(d["a_ml"]), b_ml=float(d["b_ml"]),
            d_main=float(d["d_main"]))
        c = doc["constraints"]
        dof_t = c.get("dof_target")
        constraints = DesignConstraints(
            a_main=float(c["a_main"]), gamma=float(c["gamma"]),
            f_ml=float(c["f_ml"]), d_ml=float(c["d_ml"]),
            sensor=SensorSpec(float(c["pixel_size"]), float(c["sensor_width"])),
            dof_target=None if dof_t is None else DofInterval(*map(float, dof_t)))
        p = doc["provenance"]
        provenance = Provenance(method=p["method"],
                                tool_version=p.get("tool_version", ""),
                                timestamp=p.get("timestamp", ""),
                                cli=p.get("cli"))
        der = doc.get("derived")
        derived = None
        if der is not None:
            dof = der.get("dof")
            derived = DerivedMetrics(
                m=der.get("m"), gamma_tilde=der.get("gamma_tilde"),
                dof=None if dof is None else DofInterval(*map(float, dof)),
                d_vis=der.get("d_vis"))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing or malformed field: {exc}")
    return DesignFile(design=design, constraints=constraints,
                      provenance=provenance, derived=derived,
                      schema_version=version)


def snap_pitch(design: CameraDesign) -> CameraDesign:
    """Snap d_ML to the nearest integer multiple of the pixel size."""
    px = design.sensor.pixel_size
    snapped = max(round(design.mla.d_ml / px), 1) * px
    return replace(design, mla=MlaSpec(design.mla.f_ml, snapped))


def save_design(df: DesignFile, path) -> None:
    Path(path).write_text(serialize_design(df))


def load_design(path) -> DesignFile:
    return parse_design(Path(path).read_text())


# ---------------------------------------------------------------------------
# Batch experiments
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ("design_id", "method", "mean_contrast", "gamma_err",
                   "dof_min", "dof_max", "wall_ms")


@dataclass(frozen=True)
class ExperimentSpec:
    lens_refs: tuple[str, ...]
    constraint_sets: tuple[dict, ...]
    methods: tuple[str, ...] = ("thin", "thick", "refined")
    sweeps: dict | None = None
    measure_dof: bool = False
    out_dir: str = "out"
    snap: bool = True

    def __post_init__(self):
        if not self.lens_refs:
            raise ValidationError("experiment needs at least one lens")
        if not self.constraint_sets:
            raise ValidationError("experiment needs at least one constraint set")
        bad = set(self.methods) - {"thin", "thick", "refined"}
        if bad:
            raise ValidationError(f"unknown methods: {sorted(bad)}")


def load_experiment_spec(path) -> ExperimentSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"experiment spec is not valid JSON: {exc}")
    try:
        return ExperimentSpec(
            lens_refs=tuple(doc["lenses"]),
            constraint_sets=tuple(doc["constraints"]),
            methods=tuple(doc.get("methods", ("thin", "thick", "refined"))),
            sweeps=doc.get("sweeps"),
            measure_dof=bool(doc.get("measure_dof", False)),
            out_dir=doc.get("out_dir", "out"),
            snap=bool(doc.get("snap", True)))
    except KeyError as exc:
        raise ParseError(f"experiment spec is missing {exc}")


def _constraints_from_dict(d: dict) -> DesignConstraints:
    dof_t = d.get("dof_target")
    return DesignConstraints(
        a_main=float(d["a_main"]), gamma=float(d["gamma"]),
        f_ml=float(d["f_ml"]), d_ml=float(d["d_ml"]),
        sensor=SensorSpec(float(d.get("pixel_size", 0.01)),
                          float(d.get("sensor_width", 10.0))),
        dof_target=None if dof_t is None else DofInterval(*map(float, dof_t)))


def build_design(lens: LensPrescription, constraints: DesignConstraints,
                 method: str, settings: RefineSettings | None = None
                 ) -> CameraDesign:
    """thin / thick / refined pipeline entry point."""
    if method == "thin":
        return thin_lens_design(constraints, effective_focal_length(lens), lens)
    if method == "thick":
        return thick_lens_design(constraints, lens)
    if method == "refined":
        seed = thick_lens_design(constraints, lens)
        return refine(seed, constraints, settings)[0]
    raise ValidationError(f"unknown method {method!r}")


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Produce designs for every lens x constraint set x method.

    Per-design failures are recorded in the summary (error column values
    stay empty) and the batch continues.  Writes one design file per row
    plus summary.csv into the output directory.
    """
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for lens_ref in spec.lens_refs:
        lens = resolve_lens(lens_ref)
        lens_id = lens.name or Path(lens_ref).stem
        for ci, cdict in enumerate(spec.constraint_sets):
            constraints = _constraints_from_dict(cdict)
            design_id = f"{lens_id}-c{ci}"
            for method in spec.methods:
                t0 = time.perf_counter()
                row = {k: "" for k in SUMMARY_COLUMNS}
                row["design_id"] = design_id
                row["method"] = method
                try:
                    design = build_design(lens, constraints, method)
                    derived = _measure_derived(design, constraints, spec)
                    row.update({k: v for k, v in derived.items() if v != ""})
                    export = snap_pitch(design) if spec.snap else design
                    df = DesignFile(design=export, constraints=constraints,
                                    provenance=Provenance(method=method))
                    save_design(df, out_dir / f"{design_id}_{method}.json")
                except PlenoptiforgeError as exc:
                    row["error"] = f"{type(exc).__name__}: {exc}"
                row["wall_ms"] = str(int((time.perf_counter() - t0) * 1000))
                rows.append(row)
    _write_summary(rows, out_dir / "summary.csv")
    return rows


def _measure_derived(design: CameraDesign, constraints: DesignConstraints,
                     spec: ExperimentSpec) -> dict:
    out = {"mean_contrast": "", "gamma_err": "", "dof_min": "", "dof_max": ""}
    try:
        g = measure_disparity(design, constraints.a_main)
        out["gamma_err"] = f"{abs(g - constraints.gamma):.6g}"
    except PlenoptiforgeError:
        pass
    if spec.sweeps is not None:
        n = int(spec.sweeps.get("n_widths", 20))
        rows = linewidth_sweep(design, n_steps=n, on_error="nan")
        vals = [c for _, c in rows if not math.isnan(c)]
        if vals:
            out["mean_contrast"] = f"{float(np.mean(vals)):.6g}"
    if spec.measure_dof:
        try:
            dof = camera_dof(design)
            out["dof_min"] = f"{dof.delta_min:.6g}"
            out["dof_max"] = f"{dof.delta_max:.6g}"
        except PlenoptiforgeError:
            pass
    return out


def _write_summary(rows: list[dict], path: Path) -> None:
    cols = list(SUMMARY_COLUMNS)
    if any("error" in r and r.get("error") for r in rows):
        cols.append("error")
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r.get(c, "")) for c in cols))
    path.write_text("\n".join(lines) + "\n")


def batch_failed(rows: list[dict]) -> bool:
    return any(r.get("error") for r in rows)
