"""Command-line front end: build grids, filter scans, evaluate against
box annotations, materialize synthetic scenes, and run timing sweeps.

Configuration precedence is command-line flags over a JSON config file
over built-in defaults. Machine-readable output (JSON / CSV) goes to
stdout or files; progress notes go to stderr. Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .bench import bench_sweep, write_reports
from .cloud import (
    PointCloud, label_points_by_boxes, load_boxes_json, load_csv, load_pcd,
    save_pcd,
)
from .errors import ConfigError, DataError, LidarBgError
from .filtering import FilterParams, check_params_match, subtract_background
from .gdg import build_gdg, load_gdg, save_gdg
from .metrics import EvalAccumulator
from .spatial import CellSize, VoxelSize
from .synth import generate_scene, load_scene_spec
from .cloud import _atomic_write_bytes

_DEFAULTS = {
    "voxel_size": (0.1, 0.1, 0.1),
    "cell_size": (0.2, 0.2),
    "th_points": 2,
    "th_density": 0.3,
    "neighbors": 4,
    "radius": 0.8,
    "min_sigma": 0.001,
    "tpr_threshold": 0.5,
    "exclude_classes": (),
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for a command run."""

    voxel_size: VoxelSize
    cell_size: CellSize
    th_points: int
    th_density: float
    neighbors: int
    radius: float
    min_sigma: float
    tpr_threshold: float
    exclude_classes: frozenset

    def filter_params(self) -> FilterParams:
        return FilterParams(
            voxel_size=self.voxel_size, cell_size=self.cell_size,
            th_points=self.th_points, th_density=self.th_density,
            neighbors=self.neighbors, radius=self.radius,
        )


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _parse_floats(value, n_options, name):
    if isinstance(value, (int, float)):
        parts = [float(value)]
    elif isinstance(value, str):
        try:
            parts = [float(p) for p in value.split(",") if p != ""]
        except ValueError as exc:
            raise ConfigError(f"bad {name} value {value!r}: {exc}") from exc
    else:
        parts = [float(p) for p in value]
    if len(parts) == 1:
        parts = parts * max(n_options)
    if len(parts) not in n_options:
        raise ConfigError(f"{name} needs 1 or {max(n_options)} values, got {len(parts)}")
    return tuple(parts)


def _parse_int_list(value):
    if isinstance(value, str):
        return tuple(int(p) for p in value.split(",") if p != "")
    return tuple(int(p) for p in value)


def resolve_config(args) -> RunConfig:
    """Merge flags > config file > defaults into a RunConfig."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{args.config}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
        unknown = set(file_cfg) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def pick(name):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in file_cfg:
            return file_cfg[name]
        return _DEFAULTS[name]

    try:
        voxel = VoxelSize(*_parse_floats(pick("voxel_size"), (1, 3), "voxel_size"))
        cell = CellSize(*_parse_floats(pick("cell_size"), (1, 2), "cell_size"))
        return RunConfig(
            voxel_size=voxel,
            cell_size=cell,
            th_points=int(pick("th_points")),
            th_density=float(pick("th_density")),
            neighbors=int(pick("neighbors")),
            radius=float(pick("radius")),
            min_sigma=float(pick("min_sigma")),
            tpr_threshold=float(pick("tpr_threshold")),
            exclude_classes=frozenset(_parse_int_list(pick("exclude_classes"))),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad configuration value: {exc}") from exc


def _load_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if path.suffix.lower() == ".pcd":
        return load_pcd(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    raise DataError(f"unsupported scan format {path.suffix!r} (use .pcd or .csv)")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _workers() -> int:
    raw = os.environ.get("LIDARBG_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LIDARBG_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"LIDARBG_WORKERS must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_build_gdg(args) -> int:
    cfg = resolve_config(args)
    if not args.scans:
        raise ConfigError("build-gdg needs at least one background scan")
    scans = [_load_cloud(p) for p in args.scans]
    gdg = build_gdg(scans, cfg.voxel_size, cfg.cell_size, cfg.min_sigma)
    save_gdg(gdg, args.out)
    _emit({
        "out": str(args.out),
        "cells": gdg.n_cells,
        "scans": gdg.source_scan_count,
        "points_accumulated": sum(len(s) for s in scans),
    })
    return 0


def cmd_filter(args) -> int:
    cfg = resolve_config(args)
    cloud = _load_cloud(args.scan)
    if not Path(args.gdg).exists():
        raise DataError(f"no such GDG file: {args.gdg}")
    gdg = load_gdg(args.gdg)
    params = cfg.filter_params()
    check_params_match(gdg, params)
    result = subtract_background(cloud, gdg, params)

    prefix = Path(args.out_prefix)
    fg_path = prefix.parent / (prefix.name + "_fg.pcd")
    bg_path = prefix.parent / (prefix.name + "_bg.pcd")
    part_path = prefix.parent / (prefix.name + "_partition.json")
    bg_all = sorted(set(result.background_indices.tolist())
                    | set(result.ror_removed_indices.tolist()))
    save_pcd(cloud.take(result.foreground_indices), fg_path)
    save_pcd(cloud.take(bg_all), bg_path)
    _atomic_write_bytes(part_path, (json.dumps(result.to_json_dict()) + "\n").encode())
    _emit({
        "n_points": result.n_points,
        "foreground": len(result.foreground_indices),
        "background": len(result.background_indices),
        "ror_removed": len(result.ror_removed_indices),
        "foreground_file": str(fg_path),
        "background_file": str(bg_path),
        "partition_file": str(part_path),
    })
    return 0


def _eval_one(scan_path: Path, label_path: Path, gdg, params):
    cloud = _load_cloud(scan_path)
    boxes = load_boxes_json(label_path)
    truth = label_points_by_boxes(cloud, boxes)
    return subtract_background(truth, gdg, params), truth


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    scan_dir, label_dir = Path(args.scan_dir), Path(args.label_dir)
    if not scan_dir.is_dir():
        raise DataError(f"scan directory not found: {scan_dir}")
    if not label_dir.is_dir():
        raise DataError(f"label directory not found: {label_dir}")
    scans = sorted(p for p in scan_dir.iterdir() if p.suffix.lower() in (".pcd", ".csv"))
    labels = sorted(label_dir.glob("*.json"))
    if len(scans) != len(labels):
        raise DataError(
            f"scan/label count mismatch: {len(scans)} scans vs {len(labels)} labels")
    if not scans:
        raise DataError(f"no scans found in {scan_dir}")
    pairs = []
    for scan in scans:
        label = label_dir / (scan.stem + ".json")
        if not label.exists():
            raise DataError(f"missing label file for {scan.name}: {label}")
        pairs.append((scan, label))

    gdg = load_gdg(args.gdg)
    params = cfg.filter_params()
    check_params_match(gdg, params)

    acc = EvalAccumulator(tpr_threshold=cfg.tpr_threshold,
                          excluded_classes=cfg.exclude_classes)
    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda sl: _eval_one(*sl, gdg, params), pairs))
    else:
        outcomes = [_eval_one(scan, label, gdg, params) for scan, label in pairs]
    for result, truth in outcomes:
        acc.add(result, truth)
    _note(f"evaluated {len(pairs)} scans")
    report = acc.report()
    report["n_scans"] = len(pairs)
    _emit(report)
    return 0


def cmd_synth(args) -> int:
    spec = load_scene_spec(args.spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scans, test = generate_scene(spec)
    files = []
    for i, scan in enumerate(scans):
        path = out_dir / f"background_{i:03d}.pcd"
        save_pcd(scan, path)
        files.append(str(path))
    test_path = out_dir / "test.pcd"
    save_pcd(test, test_path)
    boxes_path = out_dir / "test.json"
    _atomic_write_bytes(boxes_path, (json.dumps(
        [b.to_json_dict() for b in spec.objects], indent=2) + "\n").encode())
    _emit({
        "background_scans": files,
        "test_scan": str(test_path),
        "test_boxes": str(boxes_path),
        "test_points": len(test),
    })
    return 0


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    spec = load_scene_spec(args.spec)
    try:
        sizes = [int(s) for s in str(args.sizes).split(",") if s]
    except ValueError as exc:
        raise ConfigError(f"bad --sizes value {args.sizes!r}: {exc}") from exc
    reports = bench_sweep(sizes, args.repetitions, spec, cfg.filter_params())
    csv_path = Path(args.out)
    jsonl_path = csv_path.with_suffix(".jsonl")
    write_reports(reports, csv_path, jsonl_path)
    _emit({
        "csv": str(csv_path),
        "jsonl": str(jsonl_path),
        "reports": [r.to_json_dict() for r in reports],
    })
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--voxel-size", dest="voxel_size",
                   help="voxel edge in meters, one value or vx,vy,vz")
    p.add_argument("--cell-size", dest="cell_size",
                   help="grid cell edge in meters, one value or cx,cy")
    p.add_argument("--th-points", dest="th_points", type=int,
                   help="occupancy margin before the density rule applies")
    p.add_argument("--th-density", dest="th_density", type=float,
                   help="minimum fraction of the cell's peak density")
    p.add_argument("--neighbors", type=int,
                   help="neighbors required to keep a foreground candidate")
    p.add_argument("--radius", type=float, help="outlier-removal radius in meters")
    p.add_argument("--min-sigma", dest="min_sigma", type=float,
                   help="floor for per-cell height std dev")
    p.add_argument("--tpr-threshold", dest="tpr_threshold", type=float,
                   help="detected-fraction threshold for object TPR")
    p.add_argument("--exclude-classes", dest="exclude_classes",
                   help="comma-separated class ids treated as background")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidarbg",
                     description="Statistical background subtraction for roadside LiDAR")
    parser.add_argument("--version", action="version", version=f"lidarbg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-gdg", help="build a background grid from scans")
    p.add_argument("scans", nargs="*", help="background-only scan files (.pcd/.csv)")
    p.add_argument("--out", required=True, help="output GDG1 file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build_gdg)

    p = sub.add_parser("filter", help="subtract background from one scan")
    p.add_argument("scan", help="input scan (.pcd/.csv)")
    p.add_argument("gdg", help="GDG1 file")
    p.add_argument("--out-prefix", dest="out_prefix", required=True,
                   help="prefix for <prefix>_fg.pcd, <prefix>_bg.pcd, <prefix>_partition.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="evaluate filtering against box annotations")
    p.add_argument("--scan-dir", dest="scan_dir", required=True)
    p.add_argument("--label-dir", dest="label_dir", required=True,
                   help="directory of <scan-stem>.json box files")
    p.add_argument("--gdg", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="materialize a synthetic scene")
    p.add_argument("--spec", required=True, help="SceneSpec JSON file")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="per-stage timing sweep on synthetic scenes")
    p.add_argument("--spec", required=True, help="base SceneSpec JSON file")
    p.add_argument("--sizes", required=True, help="comma-separated scan sizes")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out", required=True, help="output CSV (JSONL written alongside)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        _note(f"error: {exc}")
        return 1
    except (DataError, OSError) as exc:
        _note(f"error: {exc}")
        return 2
    except LidarBgError as exc:
        _note(f"internal error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
