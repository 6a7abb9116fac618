"""The Gaussian grid background model: per-cell height statistics built
from background-only scans, plus its binary file format.

Each stored cell holds the mean and standard deviation of accumulated
background heights, the Gaussian peak density, and the number of
voxelized background points that fell in the cell. Cells nobody ever
occupied are simply absent; lookups treat absence as "no background
information here".
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cloud import PointCloud, merge_clouds, _atomic_write_bytes
from .errors import ConfigError, DataError, GdgFormatError
from .spatial import (
    CellId, CellSize, VoxelSize, cell_keys, pack_cell_keys,
    require_cell_not_smaller, voxelize,
)

SQRT_TWO_PI = math.sqrt(2.0 * math.pi)

_MAGIC = b"GDG1"
_VERSION = 1
_HEADER = struct.Struct("<4sI3d2ddQQ")
_CELL_DTYPE = np.dtype([
    ("ix", "<i4"), ("iy", "<i4"),
    ("mu", "<f8"), ("sigma", "<f8"), ("max_density", "<f8"),
    ("num_points", "<u4"),
])


def normal_pdf(z, mu, sigma):
    """Gaussian probability density, vectorized over any argument."""
    sigma_arr = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma_arr <= 0) or not np.all(np.isfinite(sigma_arr)):
        raise ConfigError("sigma must be positive and finite")
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    d = (z - mu) / sigma_arr
    out = np.exp(-0.5 * d * d) / (sigma_arr * SQRT_TWO_PI)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GdgCell:
    """Background statistics of one grid cell."""

    mu: float
    sigma: float
    max_density: float
    num_points: int

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma) and self.sigma > 0):
            raise DataError(f"cell statistics must be finite with sigma > 0, got {self}")
        if self.num_points < 1:
            raise DataError("stored cells must hold at least one voxelized point")
        expected = 1.0 / (self.sigma * SQRT_TWO_PI)
        if abs(self.max_density - expected) > 1e-12 * expected:
            raise DataError(
                f"max_density {self.max_density} inconsistent with sigma {self.sigma} "
                f"(expected {expected})")


@dataclass(frozen=True, eq=False)
class Gdg:
    """Immutable grid of per-cell background Gaussians.

    Cells are stored as parallel arrays sorted ascending by (ix, iy);
    the `cells` mapping view is materialized on demand.
    """

    voxel_size: VoxelSize
    cell_size: CellSize
    min_sigma: float
    source_scan_count: int
    cell_ids: np.ndarray  # (n, 2) int64, ascending (ix, iy)
    mu: np.ndarray
    sigma: np.ndarray
    max_density: np.ndarray
    num_points: np.ndarray

    def __post_init__(self):
        require_cell_not_smaller(self.cell_size, self.voxel_size)
        if not (math.isfinite(self.min_sigma) and self.min_sigma > 0):
            raise ConfigError(f"min_sigma must be positive and finite, got {self.min_sigma}")
        if self.source_scan_count < 1:
            raise DataError("source_scan_count must be at least 1")
        ids = np.asarray(self.cell_ids, dtype=np.int64).reshape(-1, 2)
        n = len(ids)
        arrays = {
            "mu": np.asarray(self.mu, dtype=np.float64).reshape(-1),
            "sigma": np.asarray(self.sigma, dtype=np.float64).reshape(-1),
            "max_density": np.asarray(self.max_density, dtype=np.float64).reshape(-1),
            "num_points": np.asarray(self.num_points, dtype=np.int64).reshape(-1),
        }
        for name, arr in arrays.items():
            if len(arr) != n:
                raise DataError(f"{name} length does not match cell count")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.abs(ids).max(initial=0) >= 2 ** 31:
            raise DataError("cell indices do not fit int32")
        ids.setflags(write=False)
        object.__setattr__(self, "cell_ids", ids)

        if n:
            if not np.isfinite(arrays["mu"]).all():
                raise DataError("cell mu values must be finite")
            if (arrays["sigma"] < self.min_sigma).any():
                bad = int(np.flatnonzero(arrays["sigma"] < self.min_sigma)[0])
                raise DataError(
                    f"cell {tuple(ids[bad])}: sigma {arrays['sigma'][bad]} below "
                    f"min_sigma {self.min_sigma}")
            if (arrays["num_points"] < 1).any():
                raise DataError("stored cells must hold at least one voxelized point")
            expected = 1.0 / (arrays["sigma"] * SQRT_TWO_PI)
            rel = np.abs(arrays["max_density"] - expected) / expected
            if rel.max() > 1e-12:
                bad = int(rel.argmax())
                raise DataError(
                    f"cell {tuple(ids[bad])}: max_density {arrays['max_density'][bad]} "
                    f"inconsistent with sigma {arrays['sigma'][bad]}")
        packed = pack_cell_keys(ids)
        if n and (np.diff(packed) <= 0).any():
            raise DataError("cells must be sorted ascending by (ix, iy) and unique")
        packed.setflags(write=False)
        object.__setattr__(self, "_packed", packed)

    @property
    def packed_keys(self) -> np.ndarray:
        return self._packed

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @cached_property
    def cells(self) -> dict[CellId, GdgCell]:
        return {
            CellId(int(ix), int(iy)): GdgCell(float(m), float(s), float(d), int(k))
            for (ix, iy), m, s, d, k in zip(
                self.cell_ids, self.mu, self.sigma, self.max_density, self.num_points)
        }

    def cell(self, cid: CellId) -> GdgCell | None:
        """Single-cell lookup; None when the cell is absent."""
        key = np.int64(cid[0]) * (2 ** 32) + (np.int64(cid[1]) + 2 ** 31)
        pos = int(np.searchsorted(self._packed, key))
        if pos < self.n_cells and self._packed[pos] == key:
            return GdgCell(float(self.mu[pos]), float(self.sigma[pos]),
                           float(self.max_density[pos]), int(self.num_points[pos]))
        return None

    @classmethod
    def from_cells(cls, voxel_size: VoxelSize, cell_size: CellSize, min_sigma: float,
                   cells: Mapping, source_scan_count: int = 1) -> "Gdg":
        items = sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1]))
        ids = np.array([[k[0], k[1]] for k, _ in items], dtype=np.int64).reshape(-1, 2)
        return cls(
            voxel_size=voxel_size, cell_size=cell_size, min_sigma=min_sigma,
            source_scan_count=source_scan_count,
            cell_ids=ids,
            mu=np.array([c.mu for _, c in items]),
            sigma=np.array([c.sigma for _, c in items]),
            max_density=np.array([c.max_density for _, c in items]),
            num_points=np.array([c.num_points for _, c in items], dtype=np.int64),
        )


def _grouped_z_stats(packed: np.ndarray, z: np.ndarray):
    """Per-group mean and population std of z, grouped by packed cell key.

    Sums accumulate over values sorted within each group, so the result
    is exactly invariant to input permutation.
    """
    uniq, inverse = np.unique(packed, return_inverse=True)
    inverse = inverse.reshape(-1)
    g = len(uniq)
    counts = np.bincount(inverse, minlength=g)
    order = np.lexsort((z, inverse))
    mean = np.bincount(inverse[order], weights=z[order], minlength=g) / counts
    dev2 = z - mean[inverse]
    dev2 *= dev2
    order = np.lexsort((dev2, inverse))
    var = np.bincount(inverse[order], weights=dev2[order], minlength=g) / counts
    return uniq, counts, mean, np.sqrt(var)


def build_gdg(background_scans: Sequence[PointCloud], voxel_size: VoxelSize,
              cell_size: CellSize, min_sigma: float = 0.001) -> Gdg:
    """Build the background grid from background-only scans.

    Accumulates the scans, voxelizes the accumulation, and stores one
    cell per (x, y) grid cell occupied by the voxelized cloud:
    num_points counts the voxelized points in the cell while mu/sigma
    come from the raw accumulated heights there (population std, floored
    at min_sigma). In the rare case where a voxel straddles a cell
    boundary and the centroid lands in a cell none of its source points
    occupy, the statistics fall back to the centroid heights themselves.
    """
    if len(background_scans) == 0:
        raise DataError("build_gdg requires at least one background scan")
    require_cell_not_smaller(cell_size, voxel_size)
    if not (math.isfinite(min_sigma) and min_sigma > 0):
        raise ConfigError(f"min_sigma must be positive and finite, got {min_sigma}")

    acc = merge_clouds(background_scans)
    if len(acc) == 0:
        raise DataError("background scans contain no points")
    low = voxelize(acc, voxel_size)

    low_packed = pack_cell_keys(cell_keys(low.xyz, cell_size))
    cells_packed, num_points = np.unique(low_packed, return_counts=True)

    acc_packed = pack_cell_keys(cell_keys(acc.xyz, cell_size))
    acc_cells, _, acc_mean, acc_std = _grouped_z_stats(acc_packed, acc.xyz[:, 2])

    pos = np.searchsorted(acc_cells, cells_packed)
    pos_c = np.minimum(pos, len(acc_cells) - 1)
    have = acc_cells[pos_c] == cells_packed
    mu = acc_mean[pos_c].copy()
    sigma = acc_std[pos_c].copy()
    if not have.all():
        # straddling voxel centroids landed in a cell with no raw points
        low_cells, _, low_mean, low_std = _grouped_z_stats(low_packed, low.xyz[:, 2])
        lpos = np.searchsorted(low_cells, cells_packed[~have])
        mu[~have] = low_mean[lpos]
        sigma[~have] = low_std[lpos]

    sigma = np.maximum(sigma, min_sigma)
    max_density = 1.0 / (sigma * SQRT_TWO_PI)

    ix = np.floor_divide(cells_packed, 2 ** 32)
    iy = cells_packed - ix * (2 ** 32) - 2 ** 31
    return Gdg(
        voxel_size=voxel_size, cell_size=cell_size, min_sigma=min_sigma,
        source_scan_count=len(background_scans),
        cell_ids=np.stack([ix, iy], axis=1),
        mu=mu, sigma=sigma, max_density=max_density,
        num_points=num_points.astype(np.int64),
    )


def save_gdg(gdg: Gdg, path: str | Path) -> None:
    """Write the GDG1 binary format (little-endian, cells sorted by id)."""
    head = _HEADER.pack(
        _MAGIC, _VERSION,
        gdg.voxel_size.vx, gdg.voxel_size.vy, gdg.voxel_size.vz,
        gdg.cell_size.cx, gdg.cell_size.cy,
        gdg.min_sigma, gdg.source_scan_count, gdg.n_cells,
    )
    rec = np.empty(gdg.n_cells, dtype=_CELL_DTYPE)
    rec["ix"] = gdg.cell_ids[:, 0]
    rec["iy"] = gdg.cell_ids[:, 1]
    rec["mu"] = gdg.mu
    rec["sigma"] = gdg.sigma
    rec["max_density"] = gdg.max_density
    rec["num_points"] = gdg.num_points
    _atomic_write_bytes(path, head + rec.tobytes())


def load_gdg(path: str | Path) -> Gdg:
    """Read a GDG1 file, validating structure and cell invariants."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise GdgFormatError(f"{path}: file shorter than the GDG1 header")
    magic, version, vx, vy, vz, cx, cy, min_sigma, scans, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise GdgFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise GdgFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + n * _CELL_DTYPE.itemsize
    if len(raw) < expected:
        raise GdgFormatError(
            f"{path}: truncated body: expected {expected} bytes for {n} cells, "
            f"got {len(raw)}")
    rec = np.frombuffer(raw, dtype=_CELL_DTYPE, count=n, offset=_HEADER.size)
    try:
        return Gdg(
            voxel_size=VoxelSize(vx, vy, vz), cell_size=CellSize(cx, cy),
            min_sigma=min_sigma, source_scan_count=scans,
            cell_ids=np.stack([rec["ix"], rec["iy"]], axis=1).astype(np.int64),
            mu=rec["mu"].astype(np.float64),
            sigma=rec["sigma"].astype(np.float64),
            max_density=rec["max_density"].astype(np.float64),
            num_points=rec["num_points"].astype(np.int64),
        )
    except (ConfigError, DataError) as exc:
        raise GdgFormatError(f"{path}: invariant violation on load: {exc}") from exc
