"""Feature providers: the trainable toy extractor and precomputed feature dumps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ShapeError
from . import tensor as T
from .layers import Linear, Module, fourier_embed
from .tensor import Tensor


@dataclass
class BackboneFeatures:
    """Raw per-modality features before positional encoding and attention.

    Grids are flattened row-major: ``f2d_coarse`` is (gh*gw, d) on the coarse
    grid, ``f2d_fine`` is (H*W, C); ``f3d_coarse`` is (M, d) on the nodes and
    ``f3d_fine`` is (N, C) on the points.
    """

    f2d_coarse: Tensor
    f2d_fine: Tensor
    f3d_coarse: Tensor
    f3d_fine: Tensor


class FeatureProvider(Protocol):
    def extract(self, image: np.ndarray, points: np.ndarray, node_points: np.ndarray,
                assignment: np.ndarray) -> BackboneFeatures: ...


def im2col(image: np.ndarray, size: int, dilation: int = 1) -> np.ndarray:
    """Square windows around every pixel with reflect padding, shape (H*W, size*size)."""
    r = (size // 2) * dilation
    pad = np.pad(image, r, mode="reflect")
    h, w = image.shape
    cols = []
    for di in range(-(size // 2), size // 2 + 1):
        for dj in range(-(size // 2), size // 2 + 1):
            oi, oj = r + di * dilation, r + dj * dilation
            cols.append(pad[oi:oi + h, oj:oj + w].ravel())
    return np.stack(cols, axis=1)


def space_to_depth(x: Tensor, grid: tuple[int, int]) -> Tensor:
    """(gh*gw, C) -> (gh/2*gw/2, 4C), concatenating each 2x2 cell."""
    gh, gw = grid
    c = x.shape[-1]
    y = T.reshape(x, (gh // 2, 2, gw // 2, 2, c))
    y = T.transpose(y, (0, 2, 1, 3, 4))
    return T.reshape(y, ((gh // 2) * (gw // 2), 4 * c))


class ToyExtractor(Module):
    """Desk-scale stand-in for the image and point backbones.

    2D: a stack of stride-2 2x2 aggregations down to the coarse grid, and a
    full-resolution head over local intensity windows. 3D: a per-point MLP on
    Fourier-embedded coordinates, node pooling of member features and one
    neighbourhood-mean round over the node k-NN graph.
    """

    def __init__(self, image_shape: tuple[int, int], coarse_grid: tuple[int, int], d: int,
                 fine_dim: int, rng: np.random.Generator, hidden: int = 64,
                 point_fourier: int = 6, window: int = 5, dilations=(1, 2, 4),
                 node_knn: int = 8, stage_channels=(16, 32, 64)):
        super().__init__()
        h, w = image_shape
        stages = int(round(np.log2(h / coarse_grid[0])))
        if (h >> stages, w >> stages) != tuple(coarse_grid) or (coarse_grid[0] << stages) != h:
            raise ShapeError(f"coarse grid {coarse_grid} is not a power-of-two reduction of {image_shape}")
        self.image_shape = (h, w)
        self.coarse_grid = tuple(coarse_grid)
        self.window, self.dilations = window, tuple(dilations)
        self.point_fourier = point_fourier
        self.node_knn = node_knn
        chans = list(stage_channels)[:stages]
        while len(chans) < stages:
            chans.append(chans[-1] if chans else 16)
        c_in = 2
        self.stages = []
        for s, c in enumerate(chans):
            self.stages.append(self.add_child(f"down{s}", Linear(4 * c_in, c, rng, gain=np.sqrt(2))))
            c_in = c
        self.coarse_out = self.add_child("coarse_out", Linear(c_in, d, rng))
        n_win = window * window * len(self.dilations) + 1
        self.fine1 = self.add_child("fine1", Linear(n_win, hidden, rng, gain=np.sqrt(2)))
        self.fine2 = self.add_child("fine2", Linear(hidden, fine_dim, rng))
        n_emb = 3 * (2 * point_fourier + 1)
        self.pt1 = self.add_child("pt1", Linear(n_emb, hidden, rng, gain=np.sqrt(2)))
        self.pt2 = self.add_child("pt2", Linear(hidden, hidden, rng, gain=np.sqrt(2)))
        self.pt_fine = self.add_child("pt_fine", Linear(hidden, fine_dim, rng))
        self.node_in = self.add_child("node_in", Linear(hidden, d, rng, gain=np.sqrt(2)))
        self.node_self = self.add_child("node_self", Linear(d, d, rng))
        self.node_nbr = self.add_child("node_nbr", Linear(d, d, rng, bias=False))

    # 2D ------------------------------------------------------------------

    def image_inputs(self, image: np.ndarray):
        """Parameter-free preprocessing (cacheable): pixel windows and 2-channel raster."""
        img = np.asarray(image, dtype=np.float64)
        if img.shape != self.image_shape:
            raise ShapeError(f"image must be {self.image_shape}, got {img.shape}")
        x = 2.0 * img - 1.0
        wins = [im2col(x, self.window, dil) for dil in self.dilations]
        centre = x.ravel()[:, None]
        # windows relative to the centre pixel plus the absolute centre value
        fine_in = np.concatenate([w - centre for w in wins] + [centre], axis=1)
        raster = np.stack([x.ravel(), x.ravel() ** 2], axis=1)
        return fine_in, raster

    def forward_2d(self, image: np.ndarray, cache=None):
        fine_in, raster = cache if cache is not None else self.image_inputs(image)
        f_fine = self.fine2(T.relu(self.fine1(fine_in)))
        x = Tensor(raster)
        grid = self.image_shape
        for lin in self.stages:
            x = T.relu(lin(space_to_depth(x, grid)))
            grid = (grid[0] // 2, grid[1] // 2)
        return self.coarse_out(x), f_fine

    # 3D ------------------------------------------------------------------

    def point_inputs(self, points: np.ndarray, node_points: np.ndarray, assignment: np.ndarray):
        emb = fourier_embed(np.asarray(points, dtype=np.float64), self.point_fourier)
        pool = (np.asarray(assignment, dtype=np.int64), len(node_points))
        k = min(self.node_knn, len(node_points))
        _, nbr = cKDTree(node_points).query(node_points, k=k)
        nbr = np.asarray(nbr).reshape(len(node_points), k)
        return emb, pool, nbr

    def forward_3d(self, points, node_points, assignment, cache=None):
        emb, pool, nbr = cache if cache is not None else self.point_inputs(points, node_points, assignment)
        h = T.relu(self.pt2(T.relu(self.pt1(emb))))
        f_fine = self.pt_fine(h)
        node = T.relu(self.node_in(T.segment_mean(h, *pool)))
        nb = T.mean(T.gather(node, nbr), axis=1)
        f_coarse = T.add(self.node_self(node), self.node_nbr(nb))
        return f_coarse, f_fine

    def extract(self, image, points, node_points, assignment, cache2d=None, cache3d=None) -> BackboneFeatures:
        c2, f2 = self.forward_2d(image, cache2d)
        c3, f3 = self.forward_3d(points, node_points, assignment, cache3d)
        return BackboneFeatures(c2, f2, c3, f3)


class FileProvider:
    """Serves precomputed backbone features from a feature dump container."""

    NAMES = ("f2d_coarse", "f2d_fine", "f3d_coarse", "f3d_fine")

    def __init__(self, tensors: dict[str, np.ndarray]):
        missing = [n for n in self.NAMES if n not in tensors]
        if missing:
            raise KeyError(f"feature dump lacks {missing}")
        self.tensors = {n: np.asarray(tensors[n], dtype=np.float64) for n in self.NAMES}

    @classmethod
    def load(cls, path) -> "FileProvider":
        from .checkpoint import read_container
        _, tensors = read_container(path)
        return cls(tensors)

    def extract(self, image, points, node_points, assignment, **_) -> BackboneFeatures:
        t = self.tensors
        n_pix = int(np.prod(np.shape(image)))
        if t["f2d_fine"].shape[0] != n_pix:
            raise ShapeError("fine 2D features do not match the image size")
        if t["f3d_fine"].shape[0] != len(points) or t["f3d_coarse"].shape[0] != len(node_points):
            raise ShapeError("3D features do not match the point/node counts")
        return BackboneFeatures(*(Tensor(t[n]) for n in self.NAMES))
