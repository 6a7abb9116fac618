"""Gaussian grid construction, the pdf kernel, and GDG1 serialization."""

import math

import numpy as np
import pytest

from lidarbg import (
    CellSize, ConfigError, DataError, Gdg, GdgCell, GdgFormatError,
    PointCloud, VoxelSize, build_gdg, load_gdg, normal_pdf, save_gdg, voxelize,
)

V = VoxelSize.uniform(0.1)
C = CellSize.uniform(0.2)

# frozen high-precision references (50-digit mpmath, rounded to float64)
PDF_STD_AT_MEAN = 0.3989422804014327
PDF_STD_AT_ONE_SIGMA = 0.2419707245191433
PDF_2_1_01 = 7.6945986267064193e-22
MAX_DENSITY_SIGMA_0001 = 398.94228040143268
MAX_DENSITY_SIGMA_01 = 3.9894228040143268


def test_normal_pdf_reference_points():
    assert normal_pdf(0.0, 0.0, 1.0) == pytest.approx(PDF_STD_AT_MEAN, rel=1e-12)
    assert normal_pdf(1.0, 0.0, 1.0) == pytest.approx(PDF_STD_AT_ONE_SIGMA, rel=1e-12)
    assert normal_pdf(2.0, 1.0, 0.1) == pytest.approx(PDF_2_1_01, rel=1e-12)


def test_normal_pdf_vectorized_and_validated():
    out = normal_pdf(np.array([0.0, 1.0]), 0.0, 1.0)
    assert out.shape == (2,)
    with pytest.raises(ConfigError):
        normal_pdf(0.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        normal_pdf(0.0, 0.0, -1.0)


def test_build_single_point_cell():
    scan = PointCloud(xyz=np.array([[0.05, 0.05, 1.0]]))
    gdg = build_gdg([scan], V, C, min_sigma=0.001)
    assert gdg.n_cells == 1
    cell = gdg.cells[(0, 0)]
    assert cell.mu == 1.0
    assert cell.sigma == 0.001  # floored
    assert cell.num_points == 1
    assert cell.max_density == pytest.approx(MAX_DENSITY_SIGMA_0001, rel=1e-12)


def test_build_two_point_cell_population_std():
    scan = PointCloud(xyz=np.array([[0.05, 0.05, 0.9], [0.15, 0.05, 1.1]]))
    gdg = build_gdg([scan], V, C, min_sigma=0.001)
    cell = gdg.cells[(0, 0)]
    assert cell.mu == pytest.approx(1.0, abs=1e-15)
    assert cell.sigma == pytest.approx(0.1, rel=1e-12)  # divide by n, not n-1
    assert cell.num_points == 2
    assert cell.max_density == pytest.approx(MAX_DENSITY_SIGMA_01, rel=1e-9)


def test_build_stats_match_naive_pass():
    # ten ground-plane scans; per-cell stats vs an independent naive pass
    rng = np.random.default_rng(123)
    scans = []
    for _ in range(10):
        xyz = np.empty((2000, 3))
        xyz[:, 0] = rng.uniform(0, 6, 2000)
        xyz[:, 1] = rng.uniform(0, 6, 2000)
        xyz[:, 2] = rng.normal(0.0, 0.02, 2000)
        scans.append(PointCloud(xyz=xyz))
    gdg = build_gdg(scans, V, C)

    per_cell: dict[tuple, list] = {}
    for scan in scans:
        for x, y, z in scan.xyz.tolist():
            per_cell.setdefault((math.floor(x / 0.2), math.floor(y / 0.2)), []).append(z)

    assert set(gdg.cells) == set(per_cell)
    checked = 0
    for cid, zs in per_cell.items():
        cell = gdg.cells[cid]
        mean = sum(zs) / len(zs)
        var = sum((v - mean) ** 2 for v in zs) / len(zs)
        assert cell.mu == pytest.approx(mean, abs=1e-9)
        assert cell.sigma == pytest.approx(max(math.sqrt(var), 0.001), rel=1e-9)
        if len(zs) >= 30:
            assert abs(cell.mu) < 0.01
            assert abs(cell.sigma - 0.02) < 0.3 * 0.02
            checked += 1
    assert checked > 100


def test_build_num_points_counts_voxelized_occupancy():
    scans = [PointCloud(xyz=np.random.default_rng(4).uniform(0, 4, (5000, 3)))]
    gdg = build_gdg(scans, V, C)
    low = voxelize(scans[0], V)
    assert int(gdg.num_points.sum()) == len(low)


def test_build_permutation_invariance():
    rng = np.random.default_rng(31)
    xyz = rng.uniform(0, 5, (20_000, 3))
    a = build_gdg([PointCloud(xyz=xyz)], V, C)
    b = build_gdg([PointCloud(xyz=xyz[rng.permutation(len(xyz))])], V, C)
    np.testing.assert_array_equal(a.cell_ids, b.cell_ids)
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-9)
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-9)
    np.testing.assert_array_equal(a.num_points, b.num_points)


def test_build_max_density_consistent_everywhere():
    scans = [PointCloud(xyz=np.random.default_rng(5).uniform(-8, 8, (30_000, 3)))]
    gdg = build_gdg(scans, V, C)
    recomputed = normal_pdf(gdg.mu, gdg.mu, gdg.sigma)
    np.testing.assert_allclose(recomputed, gdg.max_density, rtol=1e-12)


def test_build_validates_inputs():
    with pytest.raises(DataError):
        build_gdg([], V, C)
    with pytest.raises(ConfigError, match="cell_size must be bigger"):
        build_gdg([PointCloud(xyz=np.zeros((1, 3)))], VoxelSize.uniform(0.2),
                  CellSize.uniform(0.1))
    with pytest.raises(ConfigError):
        build_gdg([PointCloud(xyz=np.zeros((1, 3)))], V, C, min_sigma=0.0)


def test_gdg_cell_lookup():
    scan = PointCloud(xyz=np.array([[0.05, 0.05, 1.0], [-0.3, -0.3, 2.0]]))
    gdg = build_gdg([scan], V, C)
    assert gdg.cell((0, 0)).mu == 1.0
    assert gdg.cell((-2, -2)).mu == 2.0
    assert gdg.cell((5, 5)) is None


# -- GDG1 serialization --------------------------------------------------------

def _random_gdg(rng, n_cells):
    ids = rng.choice(4 * n_cells, size=n_cells, replace=False)
    ix = (ids % 631) - 300
    iy = (ids // 631) - 150
    sigma = rng.uniform(0.001, 0.5, n_cells)
    cells = {
        (int(a), int(b)): GdgCell(
            mu=float(m), sigma=float(s), max_density=1.0 / (s * math.sqrt(2 * math.pi)),
            num_points=int(k))
        for a, b, m, s, k in zip(ix, iy, rng.normal(0, 3, n_cells), sigma,
                                 rng.integers(1, 50, n_cells))
    }
    return Gdg.from_cells(V, C, 0.001, cells, source_scan_count=7)


def test_gdg_roundtrip_single_cell(tmp_path):
    scan = PointCloud(xyz=np.array([[0.05, 0.05, 1.0]]))
    gdg = build_gdg([scan], V, C)
    path = tmp_path / "g.gdg"
    save_gdg(gdg, path)
    back = load_gdg(path)
    assert back.voxel_size == gdg.voxel_size
    assert back.cell_size == gdg.cell_size
    assert back.min_sigma == gdg.min_sigma
    assert back.source_scan_count == gdg.source_scan_count
    assert back.cells == gdg.cells


def test_gdg_roundtrip_10k_cells(tmp_path):
    gdg = _random_gdg(np.random.default_rng(17), 10_000)
    path = tmp_path / "big.gdg"
    save_gdg(gdg, path)
    back = load_gdg(path)
    np.testing.assert_array_equal(back.cell_ids, gdg.cell_ids)
    np.testing.assert_array_equal(back.mu, gdg.mu)          # bit-exact float64
    np.testing.assert_array_equal(back.sigma, gdg.sigma)
    np.testing.assert_array_equal(back.max_density, gdg.max_density)
    np.testing.assert_array_equal(back.num_points, gdg.num_points)


def test_gdg_bad_magic(tmp_path):
    path = tmp_path / "bad.gdg"
    gdg = _random_gdg(np.random.default_rng(1), 3)
    save_gdg(gdg, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(GdgFormatError, match="bad magic"):
        load_gdg(path)


def test_gdg_truncated_body(tmp_path):
    path = tmp_path / "t.gdg"
    save_gdg(_random_gdg(np.random.default_rng(2), 5), path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(GdgFormatError, match="truncated"):
        load_gdg(path)


def test_gdg_load_rejects_invariant_violation(tmp_path):
    path = tmp_path / "v.gdg"
    save_gdg(_random_gdg(np.random.default_rng(3), 4), path)
    raw = bytearray(path.read_bytes())
    # min_sigma lives at offset 4+4+24+16 = 48; raise it above every sigma
    import struct
    struct.pack_into("<d", raw, 48, 10.0)
    path.write_bytes(bytes(raw))
    with pytest.raises(GdgFormatError, match="min_sigma"):
        load_gdg(path)
