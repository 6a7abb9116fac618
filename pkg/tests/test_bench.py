"""Stage timing instrumentation and the sweep harness."""

import json

import pytest

from lidarbg import (
    CellSize, ConfigError, DataError, FilterParams, VoxelSize, bench_sweep,
    build_gdg, generate_scene, subtract_background, timed_subtract,
)
from lidarbg.bench import reports_to_csv, reports_to_jsonl, write_reports
from conftest import intersection_scene

PARAMS = FilterParams.defaults()


@pytest.fixture(scope="module")
def timed_case():
    spec = intersection_scene(points_per_m2=25.0, n_background_scans=4)
    scans, test = generate_scene(spec)
    gdg = build_gdg(scans, PARAMS.voxel_size, PARAMS.cell_size)
    return spec, test, gdg


def test_timed_result_identical_to_plain(timed_case):
    _, test, gdg = timed_case
    plain = subtract_background(test, gdg, PARAMS)
    timed, report = timed_subtract(test, gdg, PARAMS)
    assert timed.equals(plain)
    assert report.n_input == len(test)


def test_report_invariants(timed_case):
    _, test, gdg = timed_case
    _, r = timed_subtract(test, gdg, PARAMS)
    assert r.m_voxelized <= r.n_input
    assert r.k_foreground <= r.n_input
    stage_sum = r.t_voxelize + r.t_count + r.t_filter + r.t_ror
    assert r.t_total >= stage_sum * 0.95
    assert all(t >= 0 for t in (r.t_voxelize, r.t_count, r.t_filter, r.t_ror))


def test_sweep_sizes_increase(timed_case):
    spec, _, _ = timed_case
    reports = bench_sweep([2000, 4000, 8000], 3, spec, PARAMS)
    assert len(reports) == 3
    ns = [r.n_input for r in reports]
    assert ns == sorted(ns) and ns[0] < ns[1] < ns[2]


def test_sweep_validation(timed_case):
    spec, _, _ = timed_case
    with pytest.raises(DataError):
        bench_sweep([], 3, spec, PARAMS)
    with pytest.raises(ConfigError):
        bench_sweep([1000], 2, spec, PARAMS)


def test_report_writers(tmp_path, timed_case):
    spec, _, _ = timed_case
    reports = bench_sweep([1500, 3000], 3, spec, PARAMS)
    csv_text = reports_to_csv(reports)
    rows = [ln for ln in csv_text.strip().splitlines()[1:] if ln]
    assert len(rows) == len(reports) * 5  # voxelize, count, filter, ror, total
    lines = reports_to_jsonl(reports).strip().splitlines()
    assert len(lines) == len(reports)
    parsed = json.loads(lines[0])
    assert set(parsed) == {"n_input", "m_voxelized", "k_foreground",
                           "t_voxelize", "t_count", "t_filter", "t_ror", "t_total"}
    write_reports(reports, tmp_path / "r.csv", tmp_path / "r.jsonl")
    assert (tmp_path / "r.csv").read_text() == csv_text
