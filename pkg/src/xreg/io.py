"""Binary and JSON file formats for clouds, depth maps, intrinsics, poses and images."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, DepthMap, PointCloud, RigidTransform

CLOUD_MAGIC = b"XREGPC01".ljust(16, b"\0")
DEPTH_MAGIC = b"XREGDP01"


def write_cloud(path, points) -> None:
    pts = np.asarray(getattr(points, "points", points), dtype="<f4").reshape(-1, 3)
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<Q", len(pts)))
        f.write(pts.tobytes())


def read_cloud(path) -> PointCloud:
    data = Path(path).read_bytes()
    if data[:16] != CLOUD_MAGIC:
        raise FormatError(f"{path}: not a point cloud file")
    (n,) = struct.unpack("<Q", data[16:24])
    if len(data) != 24 + 12 * n:
        raise FormatError(f"{path}: expected {n} points, file size {len(data)}")
    pts = np.frombuffer(data, dtype="<f4", offset=24).reshape(n, 3).astype(np.float64)
    return PointCloud(pts)


def write_depth(path, depth) -> None:
    vals = np.asarray(getattr(depth, "values", depth), dtype="<f4")
    h, w = vals.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(vals.tobytes())


def read_depth(path) -> DepthMap:
    data = Path(path).read_bytes()
    if data[:8] != DEPTH_MAGIC:
        raise FormatError(f"{path}: not a depth file")
    h, w = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 4 * h * w:
        raise FormatError(f"{path}: expected {h}x{w} depth values")
    return DepthMap(np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float64))


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_intrinsics(path, k: CameraIntrinsics) -> None:
    Path(path).write_text(_dump(k.to_dict()))


def read_intrinsics(path) -> CameraIntrinsics:
    try:
        return CameraIntrinsics.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: bad intrinsics ({e})") from e


def pose_to_json(t: RigidTransform) -> str:
    return _dump([[float(x) for x in row] for row in t.matrix])


def write_pose(path, t: RigidTransform) -> None:
    Path(path).write_text(pose_to_json(t))


def read_pose(path) -> RigidTransform:
    try:
        m = np.asarray(json.loads(Path(path).read_text()), dtype=np.float64)
    except (json.JSONDecodeError, ValueError) as e:
        raise FormatError(f"{path}: bad pose ({e})") from e
    if m.shape != (4, 4):
        raise FormatError(f"{path}: pose must be a 4x4 matrix")
    return RigidTransform.from_matrix(m)


def write_image(path, image) -> None:
    np.save(path, np.asarray(image, dtype="<f4"), allow_pickle=False)


def read_image(path) -> np.ndarray:
    return np.load(path, allow_pickle=False).astype(np.float64)


def write_json(path, obj) -> None:
    Path(path).write_text(_dump(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def read_correspondences(path):
    """``(uv (n,2), xyz (n,3), score (n,))`` from a JSON-lines correspondence file."""
    uv, xyz, score = [], [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            uv.append((float(r["u"]), float(r["v"])))
            xyz.append((float(r["x"]), float(r["y"]), float(r["z"])))
            score.append(float(r.get("score", 1.0)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}:{ln}: bad correspondence ({e})") from e
    return (np.asarray(uv, dtype=np.float64).reshape(-1, 2), np.asarray(xyz, dtype=np.float64).reshape(-1, 3),
            np.asarray(score, dtype=np.float64))
