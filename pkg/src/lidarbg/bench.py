"""Per-stage timing of the subtraction pipeline.

timed_subtract runs exactly the same stage functions as the production
path with a monotonic clock around each, so instrumented and plain runs
return identical results. bench_sweep scales a base scene to a series of
input sizes and reports the median timing over repetitions.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import dataclass, asdict

import numpy as np

from .cloud import PointCloud, _atomic_write_bytes
from .errors import ConfigError, DataError
from .filtering import (
    FilterParams, FilterResult, _stage_classify, _stage_count, _stage_ror,
    _stage_voxelize, _validate_inputs,
)
from .gdg import Gdg, build_gdg
from .synth import SceneSpec, generate_scene, scale_to_test_points

_STAGES = ("voxelize", "count", "filter", "ror", "total")


@dataclass(frozen=True)
class StageReport:
    """Input sizes and wall-clock stage timings for one filtered scan."""

    n_input: int       # points in the scan
    m_voxelized: int   # points after voxelization
    k_foreground: int  # candidates entering outlier removal
    t_voxelize: float  # ms
    t_count: float
    t_filter: float
    t_ror: float
    t_total: float

    def stage_times(self) -> dict[str, float]:
        return {
            "voxelize": self.t_voxelize,
            "count": self.t_count,
            "filter": self.t_filter,
            "ror": self.t_ror,
            "total": self.t_total,
        }

    def to_json_dict(self) -> dict:
        return asdict(self)


def timed_subtract(cloud: PointCloud, gdg: Gdg, params: FilterParams):
    """Filter a scan, returning (FilterResult, StageReport)."""
    _validate_inputs(cloud, gdg, params)
    clock = time.perf_counter
    t0 = clock()
    low = _stage_voxelize(cloud, params)
    t1 = clock()
    counted = _stage_count(low, params)
    t2 = clock()
    bg_mask = _stage_classify(cloud, gdg, params, counted)
    candidates = np.flatnonzero(~bg_mask)
    t3 = clock()
    kept, removed = _stage_ror(cloud, candidates, params)
    t4 = clock()
    result = FilterResult(
        background_indices=np.flatnonzero(bg_mask),
        foreground_indices=kept,
        ror_removed_indices=removed,
    )
    t5 = clock()
    report = StageReport(
        n_input=len(cloud),
        m_voxelized=len(low),
        k_foreground=len(candidates),
        t_voxelize=(t1 - t0) * 1e3,
        t_count=(t2 - t1) * 1e3,
        t_filter=(t3 - t2) * 1e3,
        t_ror=(t4 - t3) * 1e3,
        t_total=(t5 - t0) * 1e3,
    )
    return result, report


def _median_report(reports: list[StageReport]) -> StageReport:
    first = reports[0]
    return StageReport(
        n_input=first.n_input,
        m_voxelized=first.m_voxelized,
        k_foreground=first.k_foreground,
        t_voxelize=statistics.median(r.t_voxelize for r in reports),
        t_count=statistics.median(r.t_count for r in reports),
        t_filter=statistics.median(r.t_filter for r in reports),
        t_ror=statistics.median(r.t_ror for r in reports),
        t_total=statistics.median(r.t_total for r in reports),
    )


def bench_sweep(scene_sizes, repetitions: int, spec: SceneSpec,
                params: FilterParams) -> list[StageReport]:
    """Median-of-repetitions stage reports over a scan-size sweep.

    Each size rescales the base scene's sampling density and regenerates
    scene and grid deterministically from the spec seed.
    """
    sizes = list(scene_sizes)
    if not sizes:
        raise DataError("bench_sweep needs at least one scene size")
    if repetitions < 3:
        raise ConfigError(f"repetitions must be >= 3, got {repetitions}")
    out = []
    for size in sizes:
        scaled = scale_to_test_points(spec, int(size))
        scans, test = generate_scene(scaled)
        gdg = build_gdg(scans, params.voxel_size, params.cell_size)
        reports = [timed_subtract(test, gdg, params)[1] for _ in range(repetitions)]
        out.append(_median_report(reports))
    return out


def reports_to_jsonl(reports) -> str:
    return "".join(json.dumps(r.to_json_dict()) + "\n" for r in reports)


def reports_to_csv(reports) -> str:
    """Plot-ready long format: one (size, stage, ms) row per stage."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["size", "stage", "ms"])
    for r in reports:
        for stage, ms in r.stage_times().items():
            writer.writerow([r.n_input, stage, f"{ms:.6f}"])
    return buf.getvalue()


def write_reports(reports, csv_path, jsonl_path) -> None:
    _atomic_write_bytes(csv_path, reports_to_csv(reports).encode())
    _atomic_write_bytes(jsonl_path, reports_to_jsonl(reports).encode())
