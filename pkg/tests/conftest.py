"""Shared fixtures and independent brute-force helpers.

The brute-force functions here are deliberately written with plain
Python loops so they share nothing with the library's vectorized paths;
they serve as oracles for the property tests.
"""

import math

import numpy as np
import pytest
from hypothesis import settings

from lidarbg import (
    CellSize, FilterParams, OrientedBox, PointCloud, SceneSpec, VoxelSize,
    build_gdg, generate_scene,
)

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def brute_radius_counts(xyz: np.ndarray, radius: float) -> list[int]:
    """All-pairs neighbor counting with inclusive distance comparison."""
    n = len(xyz)
    r2 = radius * radius
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            dx = xyz[i, 0] - xyz[j, 0]
            dy = xyz[i, 1] - xyz[j, 1]
            dz = xyz[i, 2] - xyz[j, 2]
            if dx * dx + dy * dy + dz * dz <= r2:
                counts[i] += 1
                counts[j] += 1
    return counts


def brute_voxel_keys(xyz: np.ndarray, size: VoxelSize) -> set[tuple]:
    """Distinct floored voxel keys, enumerated point by point."""
    keys = set()
    for x, y, z in xyz.tolist():
        keys.add((math.floor(x / size.vx), math.floor(y / size.vy), math.floor(z / size.vz)))
    return keys


def naive_point_in_box(x, y, z, box: OrientedBox) -> bool:
    """Boundary-inclusive membership test written independently."""
    dx, dy, dz = x - box.center[0], y - box.center[1], z - box.center[2]
    u = math.cos(-box.yaw) * dx - math.sin(-box.yaw) * dy
    v = math.sin(-box.yaw) * dx + math.cos(-box.yaw) * dy
    l, w, h = box.dimensions
    return abs(u) <= l / 2 + 1e-12 and abs(v) <= w / 2 + 1e-12 and abs(dz) <= h / 2 + 1e-12


def random_cloud(rng: np.random.Generator, n: int, lo=-5.0, hi=5.0) -> PointCloud:
    return PointCloud(xyz=rng.uniform(lo, hi, size=(n, 3)))


def car_box(x: float, y: float, instance: int, class_id: int = 0,
            yaw: float = 0.0) -> OrientedBox:
    return OrientedBox(center=(x, y, 0.75), dimensions=(4.5, 1.8, 1.5),
                       yaw=yaw, class_id=class_id, instance_id=instance)


def intersection_scene(seed: int = 20177, points_per_m2: float = 220.0,
                       n_background_scans: int = 10) -> SceneSpec:
    """20x20 m plane with five car-sized objects and a couple of static
    structures; the desk-scale end-to-end scene."""
    return SceneSpec(
        seed=seed,
        extent=(20.0, 20.0),
        ground_noise_sigma=0.02,
        points_per_m2=points_per_m2,
        n_background_scans=n_background_scans,
        static_structures=(
            OrientedBox((-9.5, 0.0, 1.0), (0.4, 12.0, 2.0), 0.0, -1, -1),
            OrientedBox((8.0, -8.0, 1.5), (0.3, 0.3, 3.0), 0.0, -1, -2),
        ),
        objects=(
            car_box(-4.0, -4.0, 1, class_id=0, yaw=0.3),
            car_box(4.5, -3.0, 2, class_id=0, yaw=-1.2),
            car_box(0.0, 4.0, 3, class_id=0, yaw=1.571),
            car_box(-5.0, 5.5, 4, class_id=1, yaw=0.0),
            car_box(6.0, 6.0, 5, class_id=0, yaw=2.2),
        ),
        sensor_origin=(0.0, -14.0, 6.0),
    )


def random_scene_case(seed: int, max_points: int = 30_000):
    """A seeded random scene plus randomized valid FilterParams.

    Returns (test_scan, gdg, params). Sizes, object count, and every
    hyperparameter vary with the seed.
    """
    rng = np.random.default_rng(seed)
    extent = float(rng.uniform(6.0, 24.0))
    n_objects = int(rng.integers(0, 21))
    target = int(rng.integers(1_500, max_points))

    objects = []
    for i in range(n_objects):
        dims = (float(rng.uniform(0.4, 5.0)), float(rng.uniform(0.4, 2.5)),
                float(rng.uniform(0.5, 3.0)))
        objects.append(OrientedBox(
            center=(float(rng.uniform(-extent / 2, extent / 2)),
                    float(rng.uniform(-extent / 2, extent / 2)),
                    dims[2] / 2),
            dimensions=dims,
            yaw=float(rng.uniform(-math.pi, math.pi)),
            class_id=int(rng.integers(0, 4)),
            instance_id=i + 1,
        ))
    spec = SceneSpec(
        seed=int(rng.integers(0, 2**31)),
        extent=(extent, extent),
        ground_noise_sigma=float(rng.uniform(0.005, 0.05)),
        points_per_m2=1.0,
        n_background_scans=int(rng.integers(2, 7)),
        objects=tuple(objects),
        sensor_origin=(float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5)),
                       float(rng.uniform(3, 10))),
    )
    from lidarbg.synth import scale_to_test_points
    spec = scale_to_test_points(spec, target)

    vx = float(rng.uniform(0.06, 0.3))
    vy = float(rng.uniform(0.06, 0.3))
    vz = float(rng.uniform(0.06, 0.3))
    params = FilterParams(
        voxel_size=VoxelSize(vx, vy, vz),
        cell_size=CellSize(vx * float(rng.uniform(1.0, 4.0)),
                           vy * float(rng.uniform(1.0, 4.0))),
        th_points=int(rng.integers(0, 6)),
        th_density=float(rng.uniform(0.05, 0.9)),
        neighbors=int(rng.integers(0, 9)),
        radius=float(rng.uniform(0.3, 1.5)),
    )
    scans, test = generate_scene(spec)
    gdg = build_gdg(scans, params.voxel_size, params.cell_size)
    return test, gdg, params


@pytest.fixture(scope="session")
def desk_scene():
    """Generated desk-scale scene shared by the slower tests."""
    spec = intersection_scene()
    scans, test = generate_scene(spec)
    return spec, scans, test
