"""Command-line interface: design, dof-match, measure, evaluate, batch."""

from __future__ import annotations

import argparse
import math
import sys
import time

from .design_paraxial import DesignConstraints
from .design_refine import RefineSettings, dof_match
from .errors import PlenoptiforgeError
from .eval_sim import contrast_sweep, default_pattern, write_sweep_csv
from .io_config import (DerivedMetrics, DesignFile, Provenance, batch_failed,
                        build_design, load_design, load_experiment_spec,
                        resolve_lens, run_experiment, save_design, snap_pitch)
from .measurements import (DofInterval, best_visual_focus, camera_dof,
                           measure_disparity, measure_magnification,
                           visible_mli_size)
from .optics_core import SensorSpec


def _add_sensor_args(p):
    p.add_argument("--pixel-size", type=float, default=0.01,
                   help="sensor pixel size in mm (default 0.01)")
    p.add_argument("--sensor-width", type=float, default=10.0,
                   help="sensor width in mm (default 10)")


def _provenance(args, method):
    cli = {k: v for k, v in vars(args).items()
           if k not in ("func", "command") and v is not None}
    stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()) if args.stamp else ""
    return Provenance(method=method, timestamp=stamp, cli=cli)


def _cmd_design(args):
    lens = resolve_lens(args.lens)
    constraints = DesignConstraints(
        a_main=args.a_main, gamma=args.gamma, f_ml=args.f_ml, d_ml=args.d_ml,
        sensor=SensorSpec(args.pixel_size, args.sensor_width))
    design = build_design(lens, constraints, args.method)
    derived = DerivedMetrics(m=measure_magnification(design))
    export = design if args.no_snap else snap_pitch(design)
    df = DesignFile(design=export, constraints=constraints,
                    provenance=_provenance(args, args.method), derived=derived)
    save_design(df, args.output)
    print(f"wrote {args.output} ({args.method}, b_main={design.b_main:.4f} mm)")
    return 0


def _cmd_dof_match(args):
    lens = resolve_lens(args.lens)
    sensor = SensorSpec(args.pixel_size, args.sensor_width)
    d_ml = args.d_ml if args.d_ml is not None else 20.0 * args.pixel_size
    constraints = DesignConstraints(
        a_main=0.5 * (args.dof_min + args.dof_max), gamma=args.gamma,
        f_ml=args.f_ml, d_ml=d_ml, sensor=sensor,
        dof_target=DofInterval(args.dof_min, args.dof_max))
    design, trace = dof_match(constraints, lens, RefineSettings())
    dof = camera_dof(design)
    constraints_final = DesignConstraints(
        a_main=design.a_main, gamma=args.gamma, f_ml=args.f_ml,
        d_ml=design.mla.d_ml, sensor=sensor,
        dof_target=constraints.dof_target)
    derived = DerivedMetrics(m=measure_magnification(design), dof=dof)
    export = design if args.no_snap else snap_pitch(design)
    df = DesignFile(design=export, constraints=constraints_final,
                    provenance=_provenance(args, "dof_matched"), derived=derived)
    save_design(df, args.output)
    print(f"wrote {args.output} (dof [{dof.delta_min:.1f}, {dof.delta_max:.1f}] mm, "
          f"{len(trace.iterations) - 1} outer iterations)")
    return 0


def _cmd_measure(args):
    df = load_design(args.design)
    design = df.design
    what = args.what
    if what == "focus":
        fr = best_visual_focus(design.lens, design.a_main, design.d_main)
        print(f"b_parax_mm={fr.b_parax:.6f}")
        print(f"b_blur_mm={fr.b_blur:.6f}")
        print(f"b_bv_mm={fr.b_bv:.6f}")
    elif what == "magnification":
        print(f"m={measure_magnification(design):.6f}")
    elif what == "mli":
        d_vis = visible_mli_size(design, alpha=math.radians(args.alpha))
        m = measure_magnification(design)
        print(f"d_vis_mm={d_vis:.6f}")
        print(f"mli_pitch_mm={m * design.mla.d_ml:.6f}")
    elif what == "disparity":
        g = measure_disparity(design, design.a_main)
        print(f"gamma_tilde={g:.6f}")
    elif what == "dof":
        dof = camera_dof(design, alpha=math.radians(args.alpha))
        print(f"dof_min_mm={dof.delta_min:.3f}")
        print(f"dof_max_mm={dof.delta_max:.3f}")
    return 0


def _cmd_evaluate(args):
    df = load_design(args.design)
    distances = sorted(float(x) for x in args.distances.split(","))
    kind = "star_radial_profile" if args.pattern == "star" else "stripes"
    pattern = default_pattern(df.design, kind, distances[0])
    rows = contrast_sweep(df.design, distances, kind, base_pattern=pattern,
                          normalize=args.normalize)
    write_sweep_csv(rows, args.output)
    print(f"wrote {args.output} ({len(rows)} distances, "
          f"peak contrast {max(c for _, c in rows):.4f})")
    return 0


def _cmd_batch(args):
    spec = load_experiment_spec(args.spec)
    if args.output:
        spec = type(spec)(**{**spec.__dict__, "out_dir": args.output})
    rows = run_experiment(spec)
    n_err = sum(1 for r in rows if r.get("error"))
    print(f"{len(rows)} design rows, {n_err} failures -> {spec.out_dir}/summary.csv")
    return 1 if batch_failed(rows) else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plenoptiforge",
        description="Design and evaluate focused plenoptic cameras for a "
                    "given main lens prescription.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="create a thin/thick/refined design")
    p.add_argument("--lens", required=True, help="prescription file or bundled name")
    p.add_argument("--a-main", type=float, required=True, dest="a_main")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--f-ml", type=float, required=True, dest="f_ml")
    p.add_argument("--d-ml", type=float, required=True, dest="d_ml")
    p.add_argument("--method", choices=("thin", "thick", "refined"),
                   default="refined")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-snap", action="store_true",
                   help="do not snap d_ml to a pixel multiple on export")
    p.add_argument("--stamp", action="store_true",
                   help="record a wall-clock timestamp (breaks reproducibility)")
    _add_sensor_args(p)
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("dof-match", help="match a preset depth-of-field interval")
    p.add_argument("--lens", required=True)
    p.add_argument("--dof-min", type=float, required=True, dest="dof_min")
    p.add_argument("--dof-max", type=float, required=True, dest="dof_max")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--f-ml", type=float, required=True, dest="f_ml")
    p.add_argument("--d-ml", type=float, default=None, dest="d_ml",
                   help="starting pitch (default 20 pixels)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-snap", action="store_true")
    p.add_argument("--stamp", action="store_true")
    _add_sensor_args(p)
    p.set_defaults(func=_cmd_dof_match)

    p = sub.add_parser("measure", help="measure a stored design by ray tracing")
    p.add_argument("--design", required=True)
    p.add_argument("--what", required=True,
                   choices=("focus", "magnification", "mli", "disparity", "dof"))
    p.add_argument("--alpha", type=float, default=40.0,
                   help="sensor angular threshold in degrees")
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("evaluate", help="contrast sweep over scene distances")
    p.add_argument("--design", required=True)
    p.add_argument("--pattern", choices=("stripes", "star"), default="star")
    p.add_argument("--distances", required=True,
                   help="comma-separated distances in mm")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("batch", help="run an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("-o", "--output", default=None, help="override output dir")
    p.set_defaults(func=_cmd_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PlenoptiforgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
