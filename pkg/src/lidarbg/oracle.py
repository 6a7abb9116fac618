"""Naive reference implementation of the whole subtraction pipeline.

Semantically identical to filtering.subtract_background but written for
auditability: plain dictionaries, per-point loops, no spatial index, and
an all-pairs O(K^2) outlier-removal pass. It deliberately shares no
geometric kernel with the optimized path (independent floor, centroid,
and pdf code) so that a convention bug in one cannot cancel out in the
other. Tests assert exact result equality between the two.
"""

from __future__ import annotations

import math

import numpy as np

from .cloud import PointCloud
from .errors import ConfigError, DataError
from .filtering import FilterParams, FilterResult
from .gdg import Gdg


def reference_subtract(cloud: PointCloud, gdg: Gdg, params: FilterParams) -> FilterResult:
    if params.voxel_size != gdg.voxel_size or params.cell_size != gdg.cell_size:
        raise ConfigError("filter sizes must equal the GDG's")
    if len(cloud) == 0:
        raise DataError("cannot filter an empty cloud")

    pts = cloud.xyz.tolist()
    vx, vy, vz = params.voxel_size.vx, params.voxel_size.vy, params.voxel_size.vz
    cx, cy = params.cell_size.cx, params.cell_size.cy

    # stage 1: voxel centroids, accumulated in point order
    voxels: dict[tuple, list] = {}
    for x, y, z in pts:
        key = (math.floor(x / vx), math.floor(y / vy), math.floor(z / vz))
        acc = voxels.get(key)
        if acc is None:
            voxels[key] = [x, y, z, 1]
        else:
            acc[0] += x
            acc[1] += y
            acc[2] += z
            acc[3] += 1
    low = [(sx / c, sy / c, sz / c) for sx, sy, sz, c in
           (voxels[k] for k in sorted(voxels))]

    # stage 2: per-cell counts of the voxelized scan
    point_count: dict[tuple, int] = {}
    for x, y, _ in low:
        cell = (math.floor(x / cx), math.floor(y / cy))
        point_count[cell] = point_count.get(cell, 0) + 1

    # stage 3: per-point classification
    grid = gdg.cells
    sqrt_two_pi = math.sqrt(2.0 * math.pi)
    bg_idx, cand_idx = [], []
    for i, (x, y, z) in enumerate(pts):
        cell = (math.floor(x / cx), math.floor(y / cy))
        stats = grid.get(cell)
        if stats is None:
            bg = False
        elif point_count.get(cell, 0) > stats.num_points + params.th_points:
            u = (z - stats.mu) / stats.sigma
            dens = math.exp(-0.5 * u * u) / (stats.sigma * sqrt_two_pi)
            bg = dens > params.th_density * stats.max_density
        else:
            bg = True
        (bg_idx if bg else cand_idx).append(i)

    # stage 4: all-pairs radius outlier removal over the candidates
    kept, removed = [], []
    if cand_idx:
        cand = np.array([pts[i] for i in cand_idx])
        ax, ay, az = cand[:, 0], cand[:, 1], cand[:, 2]
        r2 = params.radius * params.radius
        for j, i in enumerate(cand_idx):
            dx = ax - ax[j]
            dy = ay - ay[j]
            dz = az - az[j]
            d2 = dx * dx + dy * dy + dz * dz
            n_neighbors = int((d2 <= r2).sum()) - 1  # self pair
            (kept if n_neighbors >= params.neighbors else removed).append(i)

    return FilterResult(
        background_indices=np.array(bg_idx, dtype=np.int64),
        foreground_indices=np.array(kept, dtype=np.int64),
        ror_removed_indices=np.array(removed, dtype=np.int64),
    )
