"""Uniform image patches, the multi-scale patch pyramid and point-to-node partition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import PartitionError
from .geometry import PointCloud


@dataclass(frozen=True)
class ImagePatchGrid:
    height: int
    width: int
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.grid_h <= 0 or self.grid_w <= 0:
            raise PartitionError("grid must be positive")
        if self.height % self.grid_h or self.width % self.grid_w:
            raise PartitionError(
                f"grid {self.grid_h}x{self.grid_w} does not divide image {self.height}x{self.width}")

    @property
    def patch_h(self) -> int:
        return self.height // self.grid_h

    @property
    def patch_w(self) -> int:
        return self.width // self.grid_w

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def pixel_indices(self) -> np.ndarray:
        """Flat pixel indices per patch, shape (num_patches, patch_h * patch_w), row-major both ways."""
        ph, pw = self.patch_h, self.patch_w
        rows = np.arange(self.grid_h)[:, None, None, None] * ph + np.arange(ph)[None, None, :, None]
        cols = np.arange(self.grid_w)[None, :, None, None] * pw + np.arange(pw)[None, None, None, :]
        flat = rows * self.width + cols
        return flat.reshape(self.num_patches, ph * pw)

    @property
    def centers(self) -> np.ndarray:
        """Continuous (u, v) center of each patch, shape (num_patches, 2)."""
        ph, pw = self.patch_h, self.patch_w
        v = np.arange(self.grid_h) * ph + (ph - 1) / 2.0
        u = np.arange(self.grid_w) * pw + (pw - 1) / 2.0
        vv, uu = np.meshgrid(v, u, indexing="ij")
        return np.stack([uu.ravel(), vv.ravel()], axis=1)

    def bounds(self, patch: int) -> tuple[int, int, int, int]:
        """(row0, row1, col0, col1), half-open."""
        i, j = divmod(patch, self.grid_w)
        return i * self.patch_h, (i + 1) * self.patch_h, j * self.patch_w, (j + 1) * self.patch_w

    def patch_of_pixel(self) -> np.ndarray:
        """Patch id of every pixel, shape (H*W,)."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return ((v // self.patch_h) * self.grid_w + (u // self.patch_w)).ravel()


def partition_image(height: int, width: int, grid_h: int, grid_w: int) -> ImagePatchGrid:
    return ImagePatchGrid(height, width, grid_h, grid_w)


@dataclass(frozen=True)
class PatchPyramid:
    levels: tuple[ImagePatchGrid, ...]

    @property
    def K(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> ImagePatchGrid:
        return self.levels[-1]

    @property
    def offsets(self) -> np.ndarray:
        """Start of each level inside the pooled (all-level) patch index space."""
        sizes = [lv.num_patches for lv in self.levels]
        return np.concatenate([[0], np.cumsum(sizes)])

    @property
    def total_patches(self) -> int:
        return int(self.offsets[-1])

    def unpool(self, pooled: int) -> tuple[int, int, int]:
        """Pooled index -> (level, row, col)."""
        off = self.offsets
        level = int(np.searchsorted(off, pooled, side="right") - 1)
        local = pooled - off[level]
        row, col = divmod(int(local), self.levels[level].grid_w)
        return level, row, col

    def pool_index(self, level: int, row: int, col: int) -> int:
        return int(self.offsets[level] + row * self.levels[level].grid_w + col)


def build_pyramid(height: int, width: int, base_grid=(6, 8), K: int = 3) -> PatchPyramid:
    if K < 1:
        raise PartitionError("pyramid needs at least one level")
    gh, gw = base_grid
    levels = tuple(partition_image(height, width, gh * 2 ** k, gw * 2 ** k) for k in range(K))
    return PatchPyramid(levels)


@dataclass(frozen=True, eq=False)
class PointPatchGraph:
    nodes: np.ndarray
    assignment: np.ndarray
    members: tuple = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


def nearest_index(points: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Index of the nearest reference for every point; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 3)
    if len(refs) == 1 or len(points) == 0:
        return np.zeros(len(points), dtype=np.int64)
    d, idx = cKDTree(refs).query(points, k=2)
    out = idx[:, 0].astype(np.int64)
    # the tree does not order equidistant references; settle near-ties exactly
    close = np.flatnonzero(d[:, 1] - d[:, 0] <= 1e-9 * np.maximum(d[:, 1], 1.0))
    for s in range(0, len(close), 1024):
        rows = close[s:s + 1024]
        dd = ((points[rows, None, :] - refs[None, :, :]) ** 2).sum(-1)
        out[rows] = np.argmin(dd, axis=1)
    return out


def point_to_node(points: PointCloud | np.ndarray, nodes: PointCloud | np.ndarray,
                  min_members: int = 1) -> PointPatchGraph:
    """Assign every point to its nearest node and drop nodes with fewer than ``min_members``.

    After dropping, points are re-assigned among the surviving nodes.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    nds = nodes.points if isinstance(nodes, PointCloud) else np.asarray(nodes, dtype=np.float64)
    if len(nds) == 0:
        raise PartitionError("no nodes")
    while True:
        assign = nearest_index(pts, nds)
        counts = np.bincount(assign, minlength=len(nds))
        keep = counts >= max(min_members, 1)
        if keep.all() or not keep.any():
            break
        nds = nds[keep]
    order = np.argsort(assign, kind="stable")
    splits = np.cumsum(counts)[:-1]
    members = tuple(np.split(order, splits))
    return PointPatchGraph(nds.copy(), assign, members)
