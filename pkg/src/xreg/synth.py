"""Ray-cast synthetic RGB-D scenes with exact geometry and a procedural appearance field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .geometry import CameraIntrinsics, DepthMap, PointCloud, RigidTransform, fuse_depth_frames, look_at

def _mix(h):
    # splitmix64 finalizer
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def _lattice(ix, iy, iz, seed: int):
    with np.errstate(over="ignore"):
        h = np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)
        h = _mix(h ^ ix.astype(np.int64).view(np.uint64))
        h = _mix(h ^ (iy.astype(np.int64).view(np.uint64) * np.uint64(0x632BE59BD9B4E019)))
        h = _mix(h ^ (iz.astype(np.int64).view(np.uint64) * np.uint64(0x85157AF5)))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(p: np.ndarray, seed: int, freq: float) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1) at world points ``p`` (N,3)."""
    q = np.asarray(p, dtype=np.float64) * freq
    base = np.floor(q)
    f = q - base
    f = f * f * (3.0 - 2.0 * f)
    b = base.astype(np.int64)
    out = np.zeros(len(q))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                out += wx * wy * wz * _lattice(b[:, 0] + dx, b[:, 1] + dy, b[:, 2] + dz, seed)
    return out


@dataclass(frozen=True)
class Appearance:
    """Multi-octave value noise around a base level."""

    seed: int = 0
    base: float = 0.5
    contrast: float = 0.5
    freq: float = 6.0
    octaves: int = 3

    def __call__(self, p: np.ndarray) -> np.ndarray:
        acc = np.zeros(len(p))
        amp, norm = 1.0, 0.0
        for o in range(self.octaves):
            acc += amp * value_noise(p, self.seed * 131 + o, self.freq * 2 ** o)
            norm += amp
            amp *= 0.5
        return np.clip(self.base + self.contrast * (acc / norm - 0.5) * 2.0, 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    appearance: Appearance = Appearance()

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.point) - o) @ n) / denom
        return np.where((np.abs(denom) > 1e-12) & (t > 1e-9), t, np.inf)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its minimum and maximum corners."""

    lo: tuple
    hi: tuple
    appearance: Appearance = Appearance()

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t0 = (lo - o) * inv
            t1 = (hi - o) * inv
        tmin = np.nanmax(np.minimum(t0, t1), axis=1)
        tmax = np.nanmin(np.maximum(t0, t1), axis=1)
        hit = (tmax >= tmin) & (tmax > 1e-9)
        t = np.where(tmin > 1e-9, tmin, tmax)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    appearance: Appearance = Appearance()

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        oc = o - np.asarray(self.center, float)
        a = (d * d).sum(1)
        b = 2.0 * (oc * d).sum(1)
        c = (oc * oc).sum(1) - self.radius ** 2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
        return np.where(disc >= 0, t, np.inf)


@dataclass(frozen=True)
class Orbit:
    """Circular camera path around ``target`` at fixed elevation.

    ``jitter`` moves the look-at point on a slow deterministic wobble.
    """

    target: tuple = (0.0, 0.0, 0.25)
    radius: float = 1.0
    elevation: float = 0.6
    start: float = 0.0
    step: float = 0.01
    jitter: float = 0.05
    phase: float = 0.0

    def pose(self, i: int) -> RigidTransform:
        a = self.start + i * self.step
        tgt = np.asarray(self.target, dtype=np.float64)
        eye = tgt + self.radius * np.array([np.cos(self.elevation) * np.cos(a),
                                            np.cos(self.elevation) * np.sin(a),
                                            np.sin(self.elevation)])
        wob = self.jitter * np.array([np.sin(0.37 * i + self.phase), np.cos(0.23 * i + 2 * self.phase),
                                      0.5 * np.sin(0.11 * i + 3 * self.phase)])
        return look_at(eye, tgt + wob)


@dataclass
class SceneSpec:
    seed: int
    primitives: list
    intrinsics: CameraIntrinsics
    poses: list = field(default_factory=list)
    scene_id: int = 0
    max_depth: float = np.inf


@dataclass
class SceneSample:
    image: np.ndarray
    depth: DepthMap
    intrinsics: CameraIntrinsics
    pose: RigidTransform            # camera to world
    scene_id: int
    frame_id: int

    def cloud(self, voxel: float) -> PointCloud:
        return fuse_depth_frames([(self.depth, self.intrinsics, self.pose)], voxel)


def camera_rays(k: CameraIntrinsics, pose: RigidTransform):
    """World-frame ray origins and directions with unit camera-z component, row-major pixels."""
    v, u = np.mgrid[0:k.height, 0:k.width]
    d_cam = np.stack([(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(u.size)], axis=1)
    d = d_cam @ pose.rotation.T
    o = np.broadcast_to(pose.translation, d.shape)
    return o, d


def render(primitives, k: CameraIntrinsics, pose: RigidTransform, max_depth: float = np.inf):
    """Ray-cast one view. Returns ``(image (H,W), depth (H,W) with NaN where nothing is hit)``.

    Because ray directions have unit camera-z, the hit parameter is the depth.
    Surfaces beyond ``max_depth`` keep their appearance but get no depth,
    like a range-limited sensor.
    """
    o, d = camera_rays(k, pose)
    best = np.full(len(d), np.inf)
    which = np.full(len(d), -1)
    for i, prim in enumerate(primitives):
        t = prim.intersect(o, d)
        closer = t < best
        best[closer] = t[closer]
        which[closer] = i
    hit = np.isfinite(best)
    image = np.zeros(len(d))
    pts = o + d * np.where(hit, best, 0.0)[:, None]
    for i, prim in enumerate(primitives):
        sel = which == i
        if sel.any():
            image[sel] = prim.appearance(pts[sel])
    depth = np.where(hit & (best <= max_depth), best, np.nan)
    return image.reshape(k.height, k.width), depth.reshape(k.height, k.width)


def generate_scene(spec: SceneSpec) -> list:
    """Render every pose of ``spec`` into a :class:`SceneSample`."""
    out = []
    for i, pose in enumerate(spec.poses):
        image, depth = render(spec.primitives, spec.intrinsics, pose, spec.max_depth)
        if not np.isfinite(depth).any():
            raise GenerationError(f"frame {i}: no primitive visible")
        out.append(SceneSample(image, DepthMap(depth), spec.intrinsics, pose, spec.scene_id, i))
    return out


def desk_scene(seed: int, room: float = 2.5) -> list:
    """A floor, four walls and a seeded clutter of boxes and spheres around the origin."""
    rng = np.random.default_rng(seed)

    def app(i, freq):
        return Appearance(seed=seed * 1000 + i, base=float(rng.uniform(0.3, 0.7)),
                          contrast=float(rng.uniform(0.6, 0.9)), freq=freq)

    prims = [Plane((0, 0, 0), (0, 0, 1), app(0, 4.0))]
    for j, (p, n) in enumerate((((room, 0, 0), (-1, 0, 0)), ((-room, 0, 0), (1, 0, 0)),
                                ((0, room, 0), (0, -1, 0)), ((0, -room, 0), (0, 1, 0)))):
        prims.append(Plane(p, n, app(1 + j, 3.0)))
    n_boxes = 5
    for j in range(n_boxes):
        a = 2 * np.pi * (j + rng.uniform(0.0, 0.5)) / n_boxes
        r = rng.uniform(0.15, 0.6)
        c = np.array([r * np.cos(a), r * np.sin(a)])
        half = rng.uniform([0.06, 0.06, 0.05], [0.18, 0.18, 0.3])
        prims.append(Box((c[0] - half[0], c[1] - half[1], 0.0), (c[0] + half[0], c[1] + half[1], 2 * half[2]),
                         app(10 + j, 8.0)))
    for j in range(3):
        a = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(0.2, 0.7)
        rad = rng.uniform(0.06, 0.15)
        prims.append(Sphere((r * np.cos(a), r * np.sin(a), rad), rad, app(20 + j, 10.0)))
    return prims


def mean_depth(primitives, k: CameraIntrinsics, poses, max_depth: float = np.inf) -> float:
    vals = []
    for pose in poses:
        _, depth = render(primitives, k, pose, max_depth)
        if np.isfinite(depth).any():
            vals.append(np.nanmean(depth))
    return float(np.mean(vals)) if vals else float("nan")


def calibrate_radius(primitives, k: CameraIntrinsics, target_depth: float, orbit: Orbit,
                     probes: int = 6, lo: float = 0.3, hi: float = 4.0, iters: int = 30,
                     max_depth: float = np.inf) -> float:
    """Bisection on orbit radius so the mean depth over probe views hits ``target_depth``."""
    scale = k.scaled(0.25) if k.width >= 64 else k
    angles = orbit.start + np.arange(probes) * (2 * np.pi / probes)

    def md(r):
        poses = [Orbit(orbit.target, r, orbit.elevation, float(a), 0.0, 0.0).pose(0) for a in angles]
        return mean_depth(primitives, scale, poses, max_depth)

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if md(mid) < target_depth:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
