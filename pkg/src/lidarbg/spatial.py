"""Shared geometric kernels: voxel downsampling, 2D cell indexing, and
fixed-radius neighbor counting.

All grids use half-open intervals with floor indexing, so a point on a
boundary belongs to the higher-index cell and negative coordinates index
correctly. Grid storage is sparse (keyed by integer indices); there is
no configured origin or extent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError
from .cloud import PointCloud

# |index| must stay below 2^62 to survive the float -> int64 conversion
_MAX_INDEX = 2 ** 62
# packed 2D cell keys require int32-range indices (also the GDG file limit)
_MAX_CELL_INDEX = 2 ** 31


@dataclass(frozen=True)
class VoxelSize:
    """Edge lengths in meters of the 3D downsampling voxels."""

    vx: float
    vy: float
    vz: float

    def __post_init__(self):
        for v in (self.vx, self.vy, self.vz):
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"voxel_size components must be positive and finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])

    @classmethod
    def uniform(cls, v: float) -> "VoxelSize":
        return cls(v, v, v)


@dataclass(frozen=True)
class CellSize:
    """Edge lengths in meters of the 2D grid cells."""

    cx: float
    cy: float

    def __post_init__(self):
        for v in (self.cx, self.cy):
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"cell_size components must be positive and finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @classmethod
    def uniform(cls, c: float) -> "CellSize":
        return cls(c, c)


def require_cell_not_smaller(cell: CellSize, voxel: VoxelSize) -> None:
    """Enforce the pairing constraint between grid cells and voxels."""
    if cell.cx < voxel.vx or cell.cy < voxel.vy:
        raise ConfigError(
            f"cell_size must be bigger than voxel_size (cell {cell.cx}x{cell.cy} "
            f"vs voxel {voxel.vx}x{voxel.vy})")


class CellId(NamedTuple):
    ix: int
    iy: int


def cell_id(x: float, y: float, size: CellSize) -> CellId:
    """Floored-division 2D grid index of a coordinate pair."""
    return CellId(int(math.floor(x / size.cx)), int(math.floor(y / size.cy)))


def _floor_keys(xyz: np.ndarray, sizes: np.ndarray, limit: int) -> np.ndarray:
    q = np.floor(xyz / sizes)
    if q.size and np.abs(q).max() >= limit:
        raise DataError(
            f"grid index magnitude exceeds {limit}; coordinates are too large "
            f"for the configured cell/voxel size")
    return q.astype(np.int64)


def voxel_keys(xyz: np.ndarray, size: VoxelSize) -> np.ndarray:
    """(n, 3) integer voxel indices via floored division per axis."""
    return _floor_keys(xyz, size.as_array(), _MAX_INDEX)


def cell_keys(xyz: np.ndarray, size: CellSize) -> np.ndarray:
    """(n, 2) integer cell indices of the (x, y) coordinates."""
    return _floor_keys(xyz[:, :2], size.as_array(), _MAX_CELL_INDEX)


def pack_cell_keys(keys: np.ndarray) -> np.ndarray:
    """Bijective (ix, iy) -> int64 packing, ascending in (ix, iy) lex order."""
    return keys[:, 0] * (2 ** 32) + (keys[:, 1] + 2 ** 31)


def unpack_cell_key(packed: int) -> CellId:
    ix, rem = divmod(int(packed), 2 ** 32)
    return CellId(ix, rem - 2 ** 31)


def _group_sorted_keys(keys: np.ndarray):
    """Group identical key rows.

    Returns (order, unique_keys, inverse, counts) with unique rows in
    ascending lexicographic order and inverse aligned to the input rows.
    """
    n = len(keys)
    order = np.lexsort(tuple(keys[:, k] for k in reversed(range(keys.shape[1]))))
    sk = keys[order]
    new = np.empty(n, dtype=bool)
    new[0] = True
    np.any(sk[1:] != sk[:-1], axis=1, out=new[1:])
    group_of_sorted = np.cumsum(new) - 1
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = group_of_sorted
    uniq = sk[new]
    counts = np.bincount(inverse, minlength=len(uniq))
    return order, uniq, inverse, counts


def voxelize(cloud: PointCloud, size: VoxelSize) -> PointCloud:
    """Downsample to one centroid per occupied voxel.

    Output points are ordered by ascending lexicographic (ix, iy, iz)
    voxel key. Centroid sums accumulate in input point order so results
    are reproducible bit for bit. Intensity and labels are dropped.
    """
    if len(cloud) == 0:
        return PointCloud(xyz=np.empty((0, 3)), frame_id=cloud.frame_id)
    keys = voxel_keys(cloud.xyz, size)
    _, uniq, inverse, counts = _group_sorted_keys(keys)
    g = len(uniq)
    # bincount accumulates sequentially in input order; keep it that way
    sums = np.stack(
        [np.bincount(inverse, weights=cloud.xyz[:, k], minlength=g) for k in range(3)],
        axis=1)
    centroids = sums / counts[:, None]
    return PointCloud(xyz=centroids, frame_id=cloud.frame_id)


# offsets (dx,dy,dz) in {-1,0,1}^3 that are lexicographically positive;
# scanning these from every occupied bucket visits each bucket pair once
_HALF_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
    if (dx, dy, dz) > (0, 0, 0)
]


def _pair_hits(a: np.ndarray, b: np.ndarray, r2: float):
    """Counts of cross pairs of a vs b with squared distance <= r2.

    Row-chunked to bound the temporary distance matrix. The squared
    distance is evaluated as dx*dx + dy*dy + dz*dz, matching the brute
    force convention exactly.
    """
    rows_a = np.zeros(len(a), dtype=np.int64)
    cols_b = np.zeros(len(b), dtype=np.int64)
    chunk = max(1, 4_000_000 // max(len(b), 1))
    for s in range(0, len(a), chunk):
        d = a[s:s + chunk, None, :] - b[None, :, :]
        d2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
        hits = d2 <= r2
        rows_a[s:s + chunk] = hits.sum(axis=1)
        cols_b += hits.sum(axis=0)
    return rows_a, cols_b


def radius_count(points, radius: float) -> np.ndarray:
    """Exact neighbor counts within an inclusive Euclidean radius.

    For each point, counts the OTHER points at 3D distance <= radius.
    Implemented with a bucket grid of edge = radius scanned over the 27
    adjacent buckets; accepts a PointCloud or an (n, 3) array.
    """
    if not (math.isfinite(radius) and radius > 0):
        raise ConfigError(f"radius must be positive and finite, got {radius}")
    xyz = points.xyz if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    counts = np.zeros(n, dtype=np.int64)
    if n <= 1:
        return counts

    keys = _floor_keys(xyz, np.array([radius] * 3), _MAX_INDEX)
    order, uniq, _, gcounts = _group_sorted_keys(keys)
    sxyz = xyz[order]
    starts = np.concatenate([[0], np.cumsum(gcounts)[:-1]]).astype(np.int64)
    ends = starts + gcounts
    bucket_of = {tuple(k): gi for gi, k in enumerate(uniq)}

    r2 = radius * radius
    scounts = np.zeros(n, dtype=np.int64)
    for gi, key in enumerate(map(tuple, uniq)):
        s, e = starts[gi], ends[gi]
        a = sxyz[s:e]
        if e - s > 1:
            rows, _ = _pair_hits(a, a, r2)
            scounts[s:e] += rows - 1  # self pair always hits at distance 0
        for off in _HALF_OFFSETS:
            nb = bucket_of.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if nb is None:
                continue
            s2, e2 = starts[nb], ends[nb]
            rows, cols = _pair_hits(a, sxyz[s2:e2], r2)
            scounts[s:e] += rows
            scounts[s2:e2] += cols
    counts[order] = scounts
    return counts
