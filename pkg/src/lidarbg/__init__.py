"""Interpretable statistical background subtraction for roadside LiDAR.

Build a per-cell Gaussian model of background heights from background-only
scans, then classify each point of an incoming scan as background or
foreground, with point- and object-level evaluation and per-stage timing.
"""

__version__ = "0.1.0"

from .cloud import (
    OrientedBox, Point, PointCloud, UNLABELED, label_points_by_boxes,
    load_boxes_json, load_csv, load_pcd, merge_clouds, save_boxes_json,
    save_csv, save_pcd,
)
from .spatial import CellId, CellSize, VoxelSize, cell_id, radius_count, voxelize
from .gdg import Gdg, GdgCell, build_gdg, load_gdg, normal_pdf, save_gdg
from .filtering import FilterParams, FilterResult, subtract_background
from .metrics import (
    ClassMetrics, EvalAccumulator, ObjectMetrics, PointMetrics,
    object_metrics, per_class_metrics, point_metrics,
)
from .synth import SceneSpec, generate_scene, load_scene_spec, save_scene_spec
from .oracle import reference_subtract
from .bench import StageReport, bench_sweep, timed_subtract
from .errors import (
    ConfigError, CsvFormatError, DataError, GdgFormatError, LidarBgError,
    PcdFormatError,
)

__all__ = [
    "CellId", "CellSize", "ClassMetrics", "ConfigError", "CsvFormatError",
    "DataError", "EvalAccumulator", "FilterParams", "FilterResult", "Gdg",
    "GdgCell", "GdgFormatError", "LidarBgError", "ObjectMetrics",
    "OrientedBox", "PcdFormatError", "Point", "PointCloud", "PointMetrics",
    "SceneSpec", "StageReport", "UNLABELED", "VoxelSize", "bench_sweep",
    "build_gdg", "cell_id", "generate_scene", "label_points_by_boxes",
    "load_boxes_json", "load_csv", "load_gdg", "load_pcd", "load_scene_spec",
    "merge_clouds", "normal_pdf", "object_metrics", "per_class_metrics",
    "point_metrics", "radius_count", "reference_subtract", "save_boxes_json",
    "save_csv", "save_gdg", "save_pcd", "save_scene_spec",
    "subtract_background", "timed_subtract", "voxelize",
]
