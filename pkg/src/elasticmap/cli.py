"""Command line interface: replay, export, eval, bench, plan and simulate."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as eio
from .export import FORMATS, export_global
from .metrics import cloud_to_cloud_error
from .occupancy import OccupancyConfig
from .planner import PlannerConfig, PlanningError, plan, planning_submaps
from .replay import bench, replay, synthetic_loop_list
from .submaps import ClusteringConfig
from .tsdf import TsdfConfig

log = logging.getLogger("elasticmap")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


class InputError(Exception):
    pass


def _vec3(text: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y,z but got {text!r}") from exc
    if v.shape != (3,):
        raise argparse.ArgumentTypeError(f"expected x,y,z but got {text!r}")
    return v


def _add_mapping_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pipeline", choices=("tsdf", "occupancy"), default="tsdf")
    p.add_argument("--voxel-dim", type=float, default=0.065, help="finest voxel size (m)")
    p.add_argument("--max-range", type=float, default=None, help="override sensor max range (m)")
    p.add_argument("--subsample", type=float, default=0.0,
                   help="integrate one scan per this many metres travelled (0 = all)")
    p.add_argument("--lambda-odom", type=float, default=30.0)
    p.add_argument("--lambda-cluster", type=float, default=15.0)
    p.add_argument("--update-trans", type=float, default=0.1, help="pose update threshold (m)")
    p.add_argument("--update-rot", type=float, default=2.5, help="pose update threshold (deg)")
    p.add_argument("--no-fusion", action="store_true", help="never fuse submaps")
    p.add_argument("--submap-size", type=float, default=200.0, help="submap cube side (m)")
    p.add_argument("--fixed-scale", type=int, choices=range(4), default=None)
    p.add_argument("--metrics-out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elasticmap",
                                     description="Elastic multi-resolution LiDAR mapping")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", help="map a cloud-list bundle into submaps")
    p.add_argument("bundle", type=Path)
    _add_mapping_args(p)
    p.add_argument("--save-map", type=Path, default=None, help="write submaps to .npz")

    p = sub.add_parser("export", help="fuse submaps into one map-frame reconstruction")
    p.add_argument("source", type=Path, help="bundle directory or saved .npz map")
    p.add_argument("output", type=Path)
    p.add_argument("--format", choices=FORMATS, default="mesh-ply")
    p.add_argument("--ascii", action="store_true", help="ASCII instead of binary PLY")
    p.add_argument("--slice-z", type=float, default=None)
    _add_mapping_args(p)

    p = sub.add_parser("eval", help="point-to-point error of a cloud against a reference")
    p.add_argument("test", type=Path)
    p.add_argument("reference", type=Path)
    p.add_argument("--thresholds", type=str, default="0.05,0.1,0.2,0.5")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("bench", help="integration timing on a synthetic corridor")
    p.add_argument("--scans", type=int, default=50)
    p.add_argument("--pipeline", choices=("tsdf", "occupancy"), default="tsdf")
    p.add_argument("--voxel-dim", type=float, default=0.065)
    p.add_argument("--max-range", type=float, default=60.0)
    p.add_argument("--spacing", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("plan", help="RRT* path over an occupancy map")
    p.add_argument("source", type=Path, help="bundle directory or saved .npz map")
    p.add_argument("--start", type=_vec3, required=True)
    p.add_argument("--goal", type=_vec3, required=True)
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--goal-tolerance", type=float, default=0.3)
    p.add_argument("--allow-unknown", action="store_true")
    p.add_argument("--z-band", type=str, default=None, help="zmin,zmax sampling band")
    p.add_argument("--out", type=Path, default=None, help="waypoints as PLY polyline")
    _add_mapping_args(p)

    p = sub.add_parser("simulate", help="write a synthetic looped cloud-list bundle")
    p.add_argument("output", type=Path)
    p.add_argument("--laps", type=int, default=1)
    p.add_argument("--radius", type=float, default=20.0)
    p.add_argument("--spacing", type=float, default=2.0)
    p.add_argument("--drift", type=float, default=0.0, help="metres of drift per metre")
    p.add_argument("--width", type=int, default=512, help="sensor columns")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _configs(args):
    cfg = ClusteringConfig(args.lambda_odom, args.lambda_cluster, args.update_trans, args.update_rot)
    extra = dict(submap_size=args.submap_size,
                 tsdf_config=TsdfConfig(fixed_scale=args.fixed_scale),
                 occupancy_config=OccupancyConfig(fixed_scale=args.fixed_scale))
    return cfg, extra


def _run_replay(args):
    rcl, model = eio.load_bundle(args.bundle if hasattr(args, "bundle") else args.source,
                                 load_clouds=False)
    cfg, extra = _configs(args)
    res = replay(rcl, model, args.pipeline, args.voxel_dim, args.subsample, cfg,
                 not args.no_fusion, args.max_range, **extra)
    if args.metrics_out:
        eio.write_metrics_csv(args.metrics_out, res.records)
    log.info("integrated %d scans into %d live submaps", len(res.records), len(res.manager.submaps))
    return res


def _load_submaps(args):
    if args.source.is_file() and args.source.suffix == ".npz":
        return eio.load_submaps(args.source)
    if not args.source.is_dir():
        raise InputError(f"{args.source} is neither a bundle directory nor a .npz map")
    return _run_replay(args).manager.live


def cmd_replay(args) -> int:
    res = _run_replay(args)
    if args.save_map:
        eio.save_submaps(args.save_map, res.manager.live)
    ms = [r.integration_ms for r in res.records]
    print(f"scans={len(res.records)} submaps={len(res.manager.submaps)} "
          f"median_ms={np.median(ms) if ms else 0:.1f} fusions={len(res.manager.fusions)}")
    return EXIT_OK


def cmd_export(args) -> int:
    submaps = _load_submaps(args)
    if not submaps:
        raise InputError("no submaps to export")
    export_global(submaps, args.output, args.format, binary=not args.ascii, slice_z=args.slice_z)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    test = eio.read_ply(args.test).points
    ref = eio.read_ply(args.reference).points
    try:
        th = tuple(float(t) for t in args.thresholds.split(","))
    except ValueError as exc:
        raise InputError(f"bad thresholds {args.thresholds!r}") from exc
    err = cloud_to_cloud_error(test, ref, th)
    report = {"points": int(len(test)), "median": err.median, "mean": err.mean,
              "fractions": {str(t): float(f) for t, f in zip(err.thresholds, err.fractions)}}
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"points={report['points']} median={err.median:.4f} mean={err.mean:.4f}")
        for t, f in zip(err.thresholds, err.fractions):
            print(f"  < {t:g} m: {100 * f:.1f}%")
    return EXIT_OK


def cmd_bench(args) -> int:
    r = bench(args.scans, args.voxel_dim, args.max_range, args.pipeline, args.spacing, args.seed)
    print(f"first_scan_s={r['first_s']:.3f} median_s={r['median_s']:.3f} "
          f"blocks={r['blocks']} allocated_bytes={r['allocated_bytes']}")
    return EXIT_OK


def cmd_plan(args) -> int:
    submaps = planning_submaps(_load_submaps(args))
    z_band = None
    if args.z_band:
        try:
            z_band = tuple(float(v) for v in args.z_band.split(","))
        except ValueError as exc:
            raise InputError(f"bad z band {args.z_band!r}") from exc
    cfg = PlannerConfig(robot_radius=args.radius, step=args.step, max_iterations=args.iters,
                        goal_tolerance=args.goal_tolerance, allow_unknown=args.allow_unknown,
                        z_band=z_band)
    try:
        path = plan(args.start, args.goal, submaps, cfg, seed=args.seed)
    except PlanningError as exc:
        raise InputError(str(exc)) from exc
    if path is None:
        print("no path found")
        return EXIT_RUNTIME
    for p in path.waypoints:
        print(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f}")
    print(f"length={path.length:.4f}")
    if args.out:
        n = len(path.waypoints)
        edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        eio.write_ply(args.out, path.waypoints, edges=edges)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .sensor import SphericalSensorModel

    model = SphericalSensorModel.os1_64(width=args.width, max_range=40.0)
    rcl, _, _, model = synthetic_loop_list(args.laps, args.radius, args.spacing, model,
                                           args.drift, seed=args.seed)
    eio.save_bundle(args.output, rcl, model)
    print(f"wrote {len(rcl.clouds)} scans to {args.output}")
    return EXIT_OK


COMMANDS = {"replay": cmd_replay, "export": cmd_export, "eval": cmd_eval, "bench": cmd_bench,
            "plan": cmd_plan, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
