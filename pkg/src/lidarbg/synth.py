"""Deterministic synthetic scene generation for tests and benchmarks.

A scene is a flat ground plane plus optional static structures (walls,
poles; background) and labeled foreground objects, all sampled at a
fixed surface density. Box surfaces are sampled on the faces visible
from a configurable sensor origin to mimic single-viewpoint LiDAR
sparsity; full-surface sampling is available as a flag. The seed fully
determines every generated point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cloud import UNLABELED, OrientedBox, PointCloud, _atomic_write_bytes
from .errors import DataError

# local-frame face definitions: (normal, center scale, spanning axes)
# for a box with half-dims (hl, hw, hh) along local u, v, z
_FACES = (
    ((1, 0, 0), (1, 0, 0), (1, 2)),   # +u end
    ((-1, 0, 0), (-1, 0, 0), (1, 2)),  # -u end
    ((0, 1, 0), (0, 1, 0), (0, 2)),   # +v side
    ((0, -1, 0), (0, -1, 0), (0, 2)),  # -v side
    ((0, 0, 1), (0, 0, 1), (0, 1)),   # top
    ((0, 0, -1), (0, 0, -1), (0, 1)),  # bottom
)


@dataclass(frozen=True)
class SceneSpec:
    """Fully deterministic description of a synthetic scene."""

    seed: int
    extent: tuple[float, float]
    ground_noise_sigma: float
    points_per_m2: float
    n_background_scans: int
    static_structures: tuple[OrientedBox, ...] = ()
    objects: tuple[OrientedBox, ...] = ()
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, 5.0)
    full_surface: bool = False

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        object.__setattr__(self, "sensor_origin", tuple(float(v) for v in self.sensor_origin))
        object.__setattr__(self, "static_structures", tuple(self.static_structures))
        object.__setattr__(self, "objects", tuple(self.objects))
        if len(self.extent) != 2 or min(self.extent) <= 0:
            raise DataError(f"scene extent must be two positive lengths, got {self.extent}")
        if self.points_per_m2 <= 0:
            raise DataError(f"points_per_m2 must be positive, got {self.points_per_m2}")
        if self.ground_noise_sigma < 0 or not math.isfinite(self.ground_noise_sigma):
            raise DataError("ground_noise_sigma must be finite and >= 0")
        if self.n_background_scans < 1:
            raise DataError("n_background_scans must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "extent": list(self.extent),
            "ground_noise_sigma": self.ground_noise_sigma,
            "points_per_m2": self.points_per_m2,
            "n_background_scans": self.n_background_scans,
            "static_structures": [b.to_json_dict() for b in self.static_structures],
            "objects": [b.to_json_dict() for b in self.objects],
            "sensor_origin": list(self.sensor_origin),
            "full_surface": self.full_surface,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SceneSpec":
        try:
            return cls(
                seed=int(obj["seed"]),
                extent=tuple(obj["extent"]),
                ground_noise_sigma=float(obj["ground_noise_sigma"]),
                points_per_m2=float(obj["points_per_m2"]),
                n_background_scans=int(obj["n_background_scans"]),
                static_structures=tuple(
                    OrientedBox.from_json_dict(b) for b in obj.get("static_structures", [])),
                objects=tuple(OrientedBox.from_json_dict(b) for b in obj.get("objects", [])),
                sensor_origin=tuple(obj.get("sensor_origin", (0.0, 0.0, 5.0))),
                full_surface=bool(obj.get("full_surface", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad scene spec: {exc}") from exc


def load_scene_spec(path: str | Path) -> SceneSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    return SceneSpec.from_json_dict(data)


def save_scene_spec(spec: SceneSpec, path: str | Path) -> None:
    _atomic_write_bytes(path, (json.dumps(spec.to_json_dict(), indent=2) + "\n").encode())


def _rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _face_counts(box: OrientedBox, density: float, sensor, full_surface: bool):
    """Deterministic (face, point count) pairs for the sampled faces."""
    half = np.array(box.dimensions) / 2.0
    rot = _rotation(box.yaw)
    center = np.array(box.center)
    sensor = np.array(sensor)
    out = []
    for normal, offs, span in _FACES:
        n_world = rot @ np.array(normal, dtype=np.float64)
        c_world = center + rot @ (np.array(offs, dtype=np.float64) * half)
        if not full_surface and float(n_world @ (sensor - c_world)) <= 0:
            continue
        area = 4.0 * half[span[0]] * half[span[1]]
        count = int(round(area * density))
        if count > 0:
            out.append(((normal, offs, span), count))
    return out


def expected_box_points(box: OrientedBox, density: float, sensor=(0.0, 0.0, 5.0),
                        full_surface: bool = False) -> int:
    """Points the generator will place on this box at the given density."""
    return sum(c for _, c in _face_counts(box, density, sensor, full_surface))


# sampled points sit this far inside the face so that rotation and
# translation rounding cannot push them outside the source box
_FACE_INSET = 1e-9


def _sample_box(rng: np.random.Generator, box: OrientedBox, density: float,
                sensor, full_surface: bool) -> np.ndarray:
    half = np.maximum(np.array(box.dimensions) / 2.0 - _FACE_INSET, 0.0)
    rot = _rotation(box.yaw)
    parts = []
    for (normal, offs, span), count in _face_counts(box, density, sensor, full_surface):
        local = np.empty((count, 3))
        local[:] = np.array(offs, dtype=np.float64) * half
        for ax in span:
            local[:, ax] = rng.uniform(-half[ax], half[ax], count)
        parts.append(local @ rot.T + np.array(box.center))
    if not parts:
        return np.empty((0, 3))
    return np.concatenate(parts)


def _expected_ground_points(spec: SceneSpec) -> int:
    return int(round(spec.extent[0] * spec.extent[1] * spec.points_per_m2))


def _sample_ground(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    n = _expected_ground_points(spec)
    ex, ey = spec.extent
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(-ex / 2, ex / 2, n)
    pts[:, 1] = rng.uniform(-ey / 2, ey / 2, n)
    pts[:, 2] = rng.normal(0.0, spec.ground_noise_sigma, n)
    return pts


def _background_points(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Ground plane plus jittered static structures for one scan."""
    parts = [_sample_ground(rng, spec)]
    for box in spec.static_structures:
        pts = _sample_box(rng, box, spec.points_per_m2, spec.sensor_origin, spec.full_surface)
        pts[:, 2] += rng.normal(0.0, spec.ground_noise_sigma, len(pts))
        parts.append(pts)
    return np.concatenate(parts)


def expected_scene_points(spec: SceneSpec) -> dict:
    """Deterministic size accounting used by tests and the bench sweep."""
    ground = _expected_ground_points(spec)
    structures = sum(
        expected_box_points(b, spec.points_per_m2, spec.sensor_origin, spec.full_surface)
        for b in spec.static_structures)
    objects = sum(
        expected_box_points(b, spec.points_per_m2, spec.sensor_origin, spec.full_surface)
        for b in spec.objects)
    return {
        "ground": ground,
        "structures": structures,
        "objects": objects,
        "background_scan": ground + structures,
        "test_scan": ground + structures + objects,
    }


def scale_to_test_points(spec: SceneSpec, target: int) -> SceneSpec:
    """Rescale the sampling density so the test scan holds ~target points."""
    current = expected_scene_points(spec)["test_scan"]
    if current == 0:
        raise DataError("scene produces no points; cannot scale")
    return replace(spec, points_per_m2=spec.points_per_m2 * (target / current))


def generate_scene(spec: SceneSpec) -> tuple[list[PointCloud], PointCloud]:
    """Produce (background scans, labeled test scan) from a spec.

    Background scans sample ground and structures with fresh noise per
    scan and carry no labels. The test scan adds the foreground objects,
    each point labeled with its source box's class and instance ids.
    """
    rng = np.random.default_rng(spec.seed)
    scans = []
    for i in range(spec.n_background_scans):
        scans.append(PointCloud(xyz=_background_points(rng, spec), frame_id=f"bg_{i:03d}"))

    bg_xyz = _background_points(rng, spec)
    parts = [bg_xyz]
    cls_parts = [np.full(len(bg_xyz), UNLABELED, dtype=np.int32)]
    inst_parts = [np.full(len(bg_xyz), UNLABELED, dtype=np.int32)]
    for box in spec.objects:
        pts = _sample_box(rng, box, spec.points_per_m2, spec.sensor_origin, spec.full_surface)
        parts.append(pts)
        cls_parts.append(np.full(len(pts), box.class_id, dtype=np.int32))
        inst_parts.append(np.full(len(pts), box.instance_id, dtype=np.int32))
    test = PointCloud(
        xyz=np.concatenate(parts),
        class_id=np.concatenate(cls_parts) if spec.objects else None,
        instance_id=np.concatenate(inst_parts) if spec.objects else None,
        frame_id="test",
    )
    return scans, test
