"""Background subtraction of a single scan against a Gaussian grid.

Four stages: voxelize the scan, count voxelized points per grid cell,
classify every original point by the cell rules, then confirm foreground
candidates with radius outlier removal. Candidates rejected by the ROR
step are kept in the result as a separate index set and count as
background predictions downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import ConfigError, DataError
from .gdg import Gdg, normal_pdf
from .spatial import (
    CellSize, VoxelSize, cell_keys, pack_cell_keys, radius_count, voxelize,
)


@dataclass(frozen=True)
class FilterParams:
    """The six hyperparameters of the subtraction pipeline.

    voxel_size and cell_size must equal the ones the paired grid was
    built with; this is enforced when filtering.
    """

    voxel_size: VoxelSize
    cell_size: CellSize
    th_points: int
    th_density: float
    neighbors: int
    radius: float

    def __post_init__(self):
        if self.th_points < 0:
            raise ConfigError(f"th_points must be >= 0, got {self.th_points}")
        if not (0.0 < self.th_density < 1.0):
            raise ConfigError(f"th_density must lie in (0, 1), got {self.th_density}")
        if self.neighbors < 0:
            raise ConfigError(f"neighbors must be >= 0, got {self.neighbors}")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ConfigError(f"radius must be positive and finite, got {self.radius}")

    @classmethod
    def defaults(cls) -> "FilterParams":
        """The reference configuration: voxel 0.1, cell 0.2, th_points 2,
        th_density 0.3, 4 neighbors within 0.8 m."""
        return cls(
            voxel_size=VoxelSize.uniform(0.1),
            cell_size=CellSize.uniform(0.2),
            th_points=2,
            th_density=0.3,
            neighbors=4,
            radius=0.8,
        )


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Disjoint partition of the input indices.

    background_indices, foreground_indices, and ror_removed_indices are
    sorted arrays that together cover 0..N-1 exactly once.
    """

    background_indices: np.ndarray
    foreground_indices: np.ndarray
    ror_removed_indices: np.ndarray

    def __post_init__(self):
        arrays = []
        for name in ("background_indices", "foreground_indices", "ror_removed_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            arr = np.sort(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            arrays.append(arr)
        merged = np.concatenate(arrays)
        if len(merged) and not np.array_equal(np.sort(merged), np.arange(len(merged))):
            raise DataError("result index sets must partition 0..N-1")

    @property
    def n_points(self) -> int:
        return (len(self.background_indices) + len(self.foreground_indices)
                + len(self.ror_removed_indices))

    def equals(self, other: "FilterResult") -> bool:
        return (np.array_equal(self.background_indices, other.background_indices)
                and np.array_equal(self.foreground_indices, other.foreground_indices)
                and np.array_equal(self.ror_removed_indices, other.ror_removed_indices))

    def to_json_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "background": self.background_indices.tolist(),
            "foreground": self.foreground_indices.tolist(),
            "ror_removed": self.ror_removed_indices.tolist(),
        }


def check_params_match(gdg: Gdg, params: FilterParams) -> None:
    if params.voxel_size != gdg.voxel_size:
        raise ConfigError(
            f"voxel_size {params.voxel_size} must equal the GDG's {gdg.voxel_size}")
    if params.cell_size != gdg.cell_size:
        raise ConfigError(
            f"cell_size {params.cell_size} must equal the GDG's {gdg.cell_size}")


def _validate_inputs(cloud: PointCloud, gdg: Gdg, params: FilterParams) -> None:
    check_params_match(gdg, params)
    if len(cloud) == 0:
        raise DataError("cannot filter an empty cloud")


def _stage_voxelize(cloud: PointCloud, params: FilterParams) -> PointCloud:
    return voxelize(cloud, params.voxel_size)


def _stage_count(low: PointCloud, params: FilterParams):
    """Sorted (cell keys, counts) of the voxelized scan."""
    packed = pack_cell_keys(cell_keys(low.xyz, params.cell_size))
    return np.unique(packed, return_counts=True)


def _stage_classify(cloud: PointCloud, gdg: Gdg, params: FilterParams,
                    counted) -> np.ndarray:
    """Background mask over the original points (False = candidate).

    Absent cell: candidate. Cell whose voxelized count exceeds the
    background count by more than th_points: keep only points whose
    height density stays above th_density times the cell's peak. Any
    other cell: background.
    """
    count_keys, counts = counted
    pt_keys = pack_cell_keys(cell_keys(cloud.xyz, params.cell_size))

    n_cells = gdg.n_cells
    if n_cells == 0:
        return np.zeros(len(cloud), dtype=bool)
    gpos = np.searchsorted(gdg.packed_keys, pt_keys)
    gpos_c = np.minimum(gpos, n_cells - 1)
    present = gdg.packed_keys[gpos_c] == pt_keys

    if len(count_keys):
        cpos = np.searchsorted(count_keys, pt_keys)
        cpos_c = np.minimum(cpos, len(count_keys) - 1)
        pt_count = np.where(count_keys[cpos_c] == pt_keys, counts[cpos_c], 0)
    else:
        pt_count = np.zeros(len(cloud), dtype=np.int64)

    bg = np.zeros(len(cloud), dtype=bool)
    over = pt_count > gdg.num_points[gpos_c] + params.th_points
    bg[present & ~over] = True
    dens_sel = present & over
    if dens_sel.any():
        rows = gpos_c[dens_sel]
        dens = normal_pdf(cloud.xyz[dens_sel, 2], gdg.mu[rows], gdg.sigma[rows])
        bg[dens_sel] = dens > params.th_density * gdg.max_density[rows]
    return bg


def _stage_ror(cloud: PointCloud, candidates: np.ndarray, params: FilterParams):
    """Split candidates into (kept, removed) by neighbor count among
    candidates only, self excluded."""
    if len(candidates) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    counts = radius_count(cloud.xyz[candidates], params.radius)
    keep = counts >= params.neighbors
    return candidates[keep], candidates[~keep]


def subtract_background(cloud: PointCloud, gdg: Gdg, params: FilterParams) -> FilterResult:
    """Classify every point of a scan as background or foreground."""
    _validate_inputs(cloud, gdg, params)
    low = _stage_voxelize(cloud, params)
    counted = _stage_count(low, params)
    bg_mask = _stage_classify(cloud, gdg, params, counted)
    candidates = np.flatnonzero(~bg_mask)
    kept, removed = _stage_ror(cloud, candidates, params)
    return FilterResult(
        background_indices=np.flatnonzero(bg_mask),
        foreground_indices=kept,
        ror_removed_indices=removed,
    )
