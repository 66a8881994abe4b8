"""Pinhole camera model, rigid transforms, depth unprojection and voxel grids.

Pixel convention: a pixel at row ``i`` and column ``j`` has continuous
coordinate ``(u, v) = (j, i)``. Camera frame is x right, y down, z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, EmptyInput, InvalidDepth


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
            int(round(self.width * factor)), int(round(self.height * factor)),
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation, ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        p = _frozen(self.points).reshape(-1, 3)
        if len(p) < 1:
            raise EmptyInput("point cloud has no points")
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Depth in meters; NaN, inf and non-positive entries are invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise ValueError("depth map must be 2-D")
        object.__setattr__(self, "values", v)

    @property
    def mask(self) -> np.ndarray:
        v = self.values
        with np.errstate(invalid="ignore"):
            return np.isfinite(v) & (v > 0)

    @property
    def shape(self):
        return self.values.shape


def project(p, k: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame point(s) to continuous pixel coordinates."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise BehindCamera("point has non-positive depth")
    return np.stack([k.fx * p[..., 0] / z + k.cx, k.fy * p[..., 1] / z + k.cy], axis=-1)


def project_unchecked(p, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection returning ``(uv, in_front)``; rows behind the camera get NaN."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    uv = np.stack([k.fx * p[..., 0] / zs + k.cx, k.fy * p[..., 1] / zs + k.cy], axis=-1)
    uv[~front] = np.nan
    return uv, front


def unproject(uv, depth, k: CameraIntrinsics) -> np.ndarray:
    """Lift pixel(s) with metric depth back to camera-frame 3D points."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(d) & (d > 0)
    if not np.all(ok):
        raise InvalidDepth("depth must be positive and finite")
    x = (uv[..., 0] - k.cx) / k.fx * d
    y = (uv[..., 1] - k.cy) / k.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def apply_transform(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    return t1.compose(t2)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Continuous (u, v) coordinates of every pixel in row-major order, shape (H*W, 2)."""
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)


def depth_to_points(depth: DepthMap, k: CameraIntrinsics):
    """Unproject every valid pixel.

    Returns ``(flat_indices, camera_points)`` for the valid pixels only.
    """
    h, w = depth.shape
    mask = depth.mask.ravel()
    idx = np.flatnonzero(mask)
    uv = pixel_grid(h, w)[idx]
    pts = unproject(uv, depth.values.ravel()[idx], k)
    return idx, pts


def voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(points / voxel).astype(np.int64)


def grid_subsample(pc: PointCloud | np.ndarray, voxel: float) -> PointCloud:
    """One point per occupied voxel at the barycenter of its members.

    Output order follows the lexicographic order of the integer voxel keys.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("cannot subsample an empty cloud")
    keys = voxel_keys(pts, voxel)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    return PointCloud(sums / counts[:, None])


def fuse_depth_frames(frames, voxel: float) -> PointCloud:
    """Fuse ``(DepthMap, CameraIntrinsics, camera_to_world)`` frames into one voxelized cloud."""
    if len(frames) == 0:
        raise EmptyInput("no frames to fuse")
    chunks = []
    for depth, k, pose in frames:
        _, pts = depth_to_points(depth, k)
        if len(pts):
            chunks.append(pose.apply(pts))
    if not chunks:
        raise EmptyInput("no valid depth pixels in any frame")
    return grid_subsample(np.concatenate(chunks), voxel)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    # re-orthonormalize so the 1e-9 invariant holds to machine precision
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix in radians."""
    r = np.asarray(r, dtype=np.float64)
    s = np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arctan2(s, c))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(right)
    if n < 1e-9:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd], axis=1)
    u, _, vt = np.linalg.svd(r)
    return RigidTransform(u @ vt, eye)
