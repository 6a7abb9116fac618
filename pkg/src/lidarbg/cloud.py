"""Point-cloud domain types, file ingestion, and ground-truth labeling.

Clouds are immutable, numpy-backed containers: coordinates are float64
(N, 3) arrays, intensity is optional float64, and integer labels use -1
as the "unlabeled" sentinel. Point order is preserved through every
ingestion path, so indices into a cloud are stable identifiers.

Supported file formats: a PCD subset (ascii / binary little-endian,
fields x y z [intensity] [class_id instance_id]), a plain CSV layout
(x,y,z[,intensity[,class_id,instance_id]]), and a JSON array of oriented
boxes for ground-truth annotations.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CsvFormatError, DataError, PcdFormatError

UNLABELED = -1

# PCD subset: field name -> (TYPE, SIZE, numpy little-endian dtype)
_PCD_FIELDS = {
    "x": ("F", 4, "<f4"),
    "y": ("F", 4, "<f4"),
    "z": ("F", 4, "<f4"),
    "intensity": ("F", 4, "<f4"),
    "class_id": ("I", 4, "<i4"),
    "instance_id": ("I", 4, "<i4"),
}
_PCD_HEADER_KEYS = (
    "VERSION", "FIELDS", "SIZE", "TYPE", "COUNT",
    "WIDTH", "HEIGHT", "POINTS", "DATA",
)


@dataclass(frozen=True)
class Point:
    """A single 3D point in meters with optional reflectance and labels."""

    x: float
    y: float
    z: float
    intensity: float | None = None
    class_id: int | None = None
    instance_id: int | None = None


@dataclass(frozen=True)
class OrientedBox:
    """Axis-dimensioned box with a yaw rotation about the vertical axis.

    dimensions = (length, width, height) along the box's local u, v, w
    axes; yaw rotates local u away from world x. Used for ground-truth
    annotations and synthetic scene geometry.
    """

    center: tuple[float, float, float]
    dimensions: tuple[float, float, float]
    yaw: float
    class_id: int
    instance_id: int

    def __post_init__(self):
        cx, cy, cz = (float(v) for v in self.center)
        l, w, h = (float(v) for v in self.dimensions)
        object.__setattr__(self, "center", (cx, cy, cz))
        object.__setattr__(self, "dimensions", (l, w, h))
        object.__setattr__(self, "yaw", float(self.yaw))
        if not all(math.isfinite(v) for v in (cx, cy, cz, l, w, h, self.yaw)):
            raise DataError("box fields must be finite")
        if min(l, w, h) <= 0:
            raise DataError(f"box dimensions must be positive, got {self.dimensions}")
        if not -math.pi <= self.yaw <= math.pi:
            raise DataError(f"box yaw must lie in [-pi, pi], got {self.yaw}")

    def contains(self, x: float, y: float, z: float) -> bool:
        """Boundary-inclusive point-in-box test in the box frame."""
        dx, dy, dz = x - self.center[0], y - self.center[1], z - self.center[2]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        l, w, h = self.dimensions
        return abs(u) <= l / 2 and abs(v) <= w / 2 and abs(dz) <= h / 2

    def to_json_dict(self) -> dict:
        return {
            "center": list(self.center),
            "dims": list(self.dimensions),
            "yaw": self.yaw,
            "class_id": self.class_id,
            "instance_id": self.instance_id,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "OrientedBox":
        try:
            return cls(
                center=tuple(obj["center"]),
                dimensions=tuple(obj["dims"]),
                yaw=obj["yaw"],
                class_id=int(obj["class_id"]),
                instance_id=int(obj["instance_id"]),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad box annotation object: {exc}") from exc


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered, immutable collection of points.

    Label arrays, when present, use -1 for "no label". A point with an
    instance_id must also carry a class_id.
    """

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    class_id: np.ndarray | None = None
    instance_id: np.ndarray | None = None
    frame_id: str | None = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(xyz).all():
            bad = int(np.flatnonzero(~np.isfinite(xyz).all(axis=1))[0])
            raise DataError(f"non-finite coordinate at point index {bad}")
        object.__setattr__(self, "xyz", _readonly(xyz))
        n = len(xyz)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if len(inten) != n:
                raise DataError("intensity length does not match point count")
            object.__setattr__(self, "intensity", _readonly(inten))
        for name in ("class_id", "instance_id"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int32).reshape(-1)
                if len(arr) != n:
                    raise DataError(f"{name} length does not match point count")
                object.__setattr__(self, name, _readonly(arr))
        if self.instance_id is not None:
            cls = self.class_id
            if cls is None or bool(((self.instance_id != UNLABELED) & (cls == UNLABELED)).any()):
                raise DataError("points with an instance_id must also carry a class_id")

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> Point:
        x, y, z = (float(v) for v in self.xyz[i])
        inten = float(self.intensity[i]) if self.intensity is not None else None
        cid = iid = None
        if self.class_id is not None and self.class_id[i] != UNLABELED:
            cid = int(self.class_id[i])
        if self.instance_id is not None and self.instance_id[i] != UNLABELED:
            iid = int(self.instance_id[i])
        return Point(x, y, z, inten, cid, iid)

    def take(self, indices) -> "PointCloud":
        """Sub-cloud at the given indices, preserving their order."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            xyz=self.xyz[idx],
            intensity=None if self.intensity is None else self.intensity[idx],
            class_id=None if self.class_id is None else self.class_id[idx],
            instance_id=None if self.instance_id is None else self.instance_id[idx],
            frame_id=self.frame_id,
        )

    @classmethod
    def from_points(cls, points: Iterable[Point], frame_id: str | None = None) -> "PointCloud":
        pts = list(points)
        xyz = np.array([(p.x, p.y, p.z) for p in pts], dtype=np.float64).reshape(-1, 3)
        inten = None
        if any(p.intensity is not None for p in pts):
            inten = np.array([p.intensity if p.intensity is not None else np.nan for p in pts])
        cid = iid = None
        if any(p.class_id is not None for p in pts):
            cid = np.array([p.class_id if p.class_id is not None else UNLABELED for p in pts], dtype=np.int32)
        if any(p.instance_id is not None for p in pts):
            iid = np.array([p.instance_id if p.instance_id is not None else UNLABELED for p in pts], dtype=np.int32)
        return cls(xyz=xyz, intensity=inten, class_id=cid, instance_id=iid, frame_id=frame_id)


def merge_clouds(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate clouds in sequence order.

    An optional field appears in the output if any input carries it;
    points from inputs lacking it are filled with NaN / -1.
    """
    if len(clouds) == 0:
        raise DataError("merge_clouds requires at least one cloud")
    xyz = np.concatenate([c.xyz for c in clouds], axis=0)
    inten = cid = iid = None
    if any(c.intensity is not None for c in clouds):
        inten = np.concatenate([
            c.intensity if c.intensity is not None else np.full(len(c), np.nan)
            for c in clouds
        ])
    if any(c.class_id is not None for c in clouds):
        cid = np.concatenate([
            c.class_id if c.class_id is not None else np.full(len(c), UNLABELED, dtype=np.int32)
            for c in clouds
        ])
    if any(c.instance_id is not None for c in clouds):
        iid = np.concatenate([
            c.instance_id if c.instance_id is not None else np.full(len(c), UNLABELED, dtype=np.int32)
            for c in clouds
        ])
    return PointCloud(xyz=xyz, intensity=inten, class_id=cid, instance_id=iid,
                      frame_id=clouds[0].frame_id)


def label_points_by_boxes(cloud: PointCloud, boxes: Sequence[OrientedBox]) -> PointCloud:
    """Assign per-point class/instance labels from oriented-box annotations.

    A point inside exactly one box takes that box's ids. A point inside
    several takes the box whose center is nearest (lowest instance_id on
    an exact distance tie). Box membership is boundary inclusive. Points
    inside no box come out unlabeled; any pre-existing labels are
    discarded. Coordinates, ordering, and count never change.
    """
    ids = [b.instance_id for b in boxes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"duplicate box instance_id values: {dup}")

    n = len(cloud)
    best_dist = np.full(n, np.inf)
    cid = np.full(n, UNLABELED, dtype=np.int32)
    iid = np.full(n, UNLABELED, dtype=np.int32)
    xyz = cloud.xyz
    # ascending instance_id + strict < update makes the lowest id win ties
    for box in sorted(boxes, key=lambda b: b.instance_id):
        d = xyz - np.asarray(box.center)
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        u = c * d[:, 0] + s * d[:, 1]
        v = -s * d[:, 0] + c * d[:, 1]
        l, w, h = box.dimensions
        inside = (np.abs(u) <= l / 2) & (np.abs(v) <= w / 2) & (np.abs(d[:, 2]) <= h / 2)
        dist = np.einsum("ij,ij->i", d, d)
        better = inside & (dist < best_dist)
        best_dist[better] = dist[better]
        cid[better] = box.class_id
        iid[better] = box.instance_id
    return PointCloud(xyz=cloud.xyz, intensity=cloud.intensity,
                      class_id=cid, instance_id=iid, frame_id=cloud.frame_id)


# ---------------------------------------------------------------------------
# Box annotation JSON
# ---------------------------------------------------------------------------

def load_boxes_json(path: str | Path) -> list[OrientedBox]:
    """Load a JSON array of oriented-box annotations."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(data, list):
        raise DataError(f"{path}: expected a JSON array of boxes")
    return [OrientedBox.from_json_dict(obj) for obj in data]


def save_boxes_json(boxes: Sequence[OrientedBox], path: str | Path) -> None:
    _atomic_write_bytes(
        path,
        (json.dumps([b.to_json_dict() for b in boxes], indent=2) + "\n").encode(),
    )


# ---------------------------------------------------------------------------
# PCD subset
# ---------------------------------------------------------------------------

def load_pcd(path: str | Path) -> PointCloud:
    """Load a PCD file (ascii or binary little-endian subset).

    The subset requires x, y, z float32 fields and optionally intensity
    (float32) and class_id / instance_id (int32). HEIGHT > 1 clouds are
    read as flat sequences. Errors report a line number for header and
    ascii problems and a byte offset for binary ones.
    """
    with open(path, "rb") as fh:
        raw = fh.read()

    header, body_offset, data_mode, n_points, fields = _parse_pcd_header(raw, str(path))
    dtype = np.dtype([(f, _PCD_FIELDS[f][2]) for f in fields])

    if data_mode == "binary":
        body = raw[body_offset:]
        expected = n_points * dtype.itemsize
        if len(body) < expected:
            short = (expected - len(body) + dtype.itemsize - 1) // dtype.itemsize
            raise PcdFormatError(
                f"{path}: binary body truncated at byte {body_offset + len(body)}: "
                f"expected {expected} bytes for {n_points} points, got {len(body)} "
                f"(short {short} points)")
        rec = np.frombuffer(body, dtype=dtype, count=n_points)
    else:
        text = raw[body_offset:].decode("ascii", errors="replace")
        rows = [ln for ln in text.splitlines() if ln.strip()]
        if len(rows) < n_points:
            raise PcdFormatError(
                f"{path}: ascii body truncated: header declares {n_points} points "
                f"but body holds {len(rows)} (short {n_points - len(rows)})")
        header_lines = raw[:body_offset].count(b"\n")
        rec = np.empty(n_points, dtype=dtype)
        for i in range(n_points):
            parts = rows[i].split()
            if len(parts) != len(fields):
                raise PcdFormatError(
                    f"{path}: line {header_lines + i + 1}: expected {len(fields)} "
                    f"values, got {len(parts)}")
            try:
                for name, tok in zip(fields, parts):
                    if _PCD_FIELDS[name][0] == "F":
                        rec[name][i] = np.float32(float(tok))
                    else:
                        rec[name][i] = int(tok)
            except (ValueError, OverflowError) as exc:
                raise PcdFormatError(
                    f"{path}: line {header_lines + i + 1}: {exc}") from exc

    xyz32 = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    if not np.isfinite(xyz32).all():
        bad = int(np.flatnonzero(~np.isfinite(xyz32).all(axis=1))[0])
        raise PcdFormatError(f"{path}: non-finite coordinate at point index {bad}")
    return PointCloud(
        xyz=xyz32.astype(np.float64),
        intensity=rec["intensity"].astype(np.float64) if "intensity" in fields else None,
        class_id=rec["class_id"].copy() if "class_id" in fields else None,
        instance_id=rec["instance_id"].copy() if "instance_id" in fields else None,
        frame_id=Path(path).stem,
    )


def _parse_pcd_header(raw: bytes, path: str):
    """Return (header dict, body byte offset, data mode, n_points, fields)."""
    header: dict[str, list[str]] = {}
    offset = 0
    line_no = 0
    data_mode = None
    while offset < len(raw):
        eol = raw.find(b"\n", offset)
        if eol < 0:
            eol = len(raw)
        line = raw[offset:eol].decode("ascii", errors="replace").strip()
        line_no += 1
        next_offset = eol + 1
        if line.startswith("#") or not line:
            offset = next_offset
            continue
        parts = line.split()
        key = parts[0].upper()
        if key == "VIEWPOINT":  # common in the wild; carries nothing we use
            offset = next_offset
            continue
        if key not in _PCD_HEADER_KEYS:
            raise PcdFormatError(f"{path}: line {line_no}: unknown header key {parts[0]!r}")
        header[key] = parts[1:]
        offset = next_offset
        if key == "DATA":
            data_mode = parts[1].lower() if len(parts) > 1 else ""
            break
    if data_mode is None:
        raise PcdFormatError(f"{path}: header ended without a DATA line")
    if data_mode not in ("ascii", "binary"):
        raise PcdFormatError(
            f"{path}: line {line_no}: unsupported DATA mode {data_mode!r} "
            "(only ascii and binary)")

    for key in ("FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "POINTS"):
        if key not in header:
            raise PcdFormatError(f"{path}: missing required header key {key}")

    fields = header["FIELDS"]
    for name in ("x", "y", "z"):
        if name not in fields:
            raise PcdFormatError(f"{path}: FIELDS must include x y z, got {fields}")
    sizes, types, counts = header["SIZE"], header["TYPE"], header["COUNT"]
    if not (len(sizes) == len(types) == len(counts) == len(fields)):
        raise PcdFormatError(f"{path}: SIZE/TYPE/COUNT length does not match FIELDS")
    for name, size, typ, count in zip(fields, sizes, types, counts):
        if name not in _PCD_FIELDS:
            raise PcdFormatError(f"{path}: unsupported field {name!r}")
        want_type, want_size, _ = _PCD_FIELDS[name]
        if typ != want_type or int(size) != want_size or int(count) != 1:
            raise PcdFormatError(
                f"{path}: unsupported layout for field {name!r}: "
                f"TYPE {typ} SIZE {size} COUNT {count} "
                f"(expected {want_type} {want_size} 1)")

    try:
        width, height, n_points = int(header["WIDTH"][0]), int(header["HEIGHT"][0]), int(header["POINTS"][0])
    except (ValueError, IndexError) as exc:
        raise PcdFormatError(f"{path}: bad WIDTH/HEIGHT/POINTS value: {exc}") from exc
    if width * height != n_points:
        raise PcdFormatError(
            f"{path}: WIDTH*HEIGHT = {width * height} does not equal POINTS = {n_points}")
    return header, offset, data_mode, n_points, fields


def save_pcd(cloud: PointCloud, path: str | Path, binary: bool = True) -> None:
    """Write a cloud in the PCD subset; float fields are stored as float32."""
    fields = ["x", "y", "z"]
    if cloud.intensity is not None:
        fields.append("intensity")
    if cloud.class_id is not None:
        fields.append("class_id")
    if cloud.instance_id is not None:
        fields.append("instance_id")

    n = len(cloud)
    dtype = np.dtype([(f, _PCD_FIELDS[f][2]) for f in fields])
    rec = np.empty(n, dtype=dtype)
    rec["x"], rec["y"], rec["z"] = (cloud.xyz[:, k].astype(np.float32) for k in range(3))
    if "intensity" in fields:
        rec["intensity"] = cloud.intensity.astype(np.float32)
    if "class_id" in fields:
        rec["class_id"] = cloud.class_id
    if "instance_id" in fields:
        rec["instance_id"] = cloud.instance_id

    lines = [
        "VERSION 0.7",
        "FIELDS " + " ".join(fields),
        "SIZE " + " ".join(str(_PCD_FIELDS[f][1]) for f in fields),
        "TYPE " + " ".join(_PCD_FIELDS[f][0] for f in fields),
        "COUNT " + " ".join("1" for _ in fields),
        f"WIDTH {n}",
        "HEIGHT 1",
        f"POINTS {n}",
        f"DATA {'binary' if binary else 'ascii'}",
    ]
    head = ("\n".join(lines) + "\n").encode("ascii")
    if binary:
        _atomic_write_bytes(path, head + rec.tobytes())
    else:
        rows = []
        for i in range(n):
            toks = []
            for f in fields:
                if _PCD_FIELDS[f][0] == "F":
                    toks.append(np.format_float_positional(rec[f][i], unique=True, trim="0"))
                else:
                    toks.append(str(int(rec[f][i])))
            rows.append(" ".join(toks))
        _atomic_write_bytes(path, head + ("\n".join(rows) + "\n").encode("ascii") if rows else head)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_csv(path: str | Path) -> PointCloud:
    """Load points from CSV rows x,y,z[,intensity[,class_id,instance_id]].

    An optional single header row is skipped. The column count must be
    3, 4, or 6 and consistent across rows; errors cite the file line.
    """
    xs, intens, cids, iids = [], [], [], []
    ncols = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if ncols is None:
                # header row: first field is not numeric
                try:
                    float(parts[0])
                except ValueError:
                    continue
                if len(parts) not in (3, 4, 6):
                    raise CsvFormatError(
                        f"{path}: line {line_no}: expected 3, 4, or 6 columns, got {len(parts)}")
                ncols = len(parts)
            if len(parts) != ncols:
                raise CsvFormatError(
                    f"{path}: line {line_no}: inconsistent column count "
                    f"({len(parts)}, expected {ncols})")
            try:
                xs.append((float(parts[0]), float(parts[1]), float(parts[2])))
                if ncols >= 4:
                    intens.append(float(parts[3]))
                if ncols == 6:
                    cids.append(int(parts[4]))
                    iids.append(int(parts[5]))
            except ValueError as exc:
                raise CsvFormatError(f"{path}: line {line_no}: {exc}") from exc
    xyz = np.array(xs, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(xyz).all():
        bad = int(np.flatnonzero(~np.isfinite(xyz).all(axis=1))[0])
        raise CsvFormatError(f"{path}: non-finite coordinate at data row {bad}")
    return PointCloud(
        xyz=xyz,
        intensity=np.array(intens) if intens else None,
        class_id=np.array(cids, dtype=np.int32) if cids else None,
        instance_id=np.array(iids, dtype=np.int32) if iids else None,
        frame_id=Path(path).stem,
    )


def save_csv(cloud: PointCloud, path: str | Path) -> None:
    """Write CSV with full float64 round-trip precision."""
    labeled = cloud.class_id is not None and cloud.instance_id is not None
    rows = []
    for i in range(len(cloud)):
        row = [repr(float(v)) for v in cloud.xyz[i]]
        if cloud.intensity is not None or labeled:
            inten = cloud.intensity[i] if cloud.intensity is not None else 0.0
            row.append(repr(float(inten)))
        if labeled:
            row += [str(int(cloud.class_id[i])), str(int(cloud.instance_id[i]))]
        rows.append(",".join(row))
    _atomic_write_bytes(path, ("\n".join(rows) + "\n").encode("ascii") if rows else b"")


def _atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file + rename so partial files never appear."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
