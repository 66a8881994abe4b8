"""The full matching network: backbone features -> refined, normalized matching features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import Config
from ..patching import PatchPyramid, build_pyramid
from . import tensor as T
from .extractor import BackboneFeatures, ToyExtractor
from .layers import (Linear, Module, PyramidHead, Transformer, add_positional,
                     normalized_pixel_coords, pyramid_features, resize_grid)
from .tensor import Tensor


@dataclass
class MatchFeatures:
    """Unit-norm features used by coarse and fine matching.

    ``levels`` follows the pyramid order (coarsest first), each (gh*gw, d).
    ``pixels`` is (H*W, C) and ``points`` (N, C).
    """

    levels: list
    nodes: Tensor
    pixels: Tensor
    points: Tensor

    def numpy(self):
        return MatchFeatures([np.asarray(T.as_tensor(x).data) for x in self.levels],
                             np.asarray(T.as_tensor(self.nodes).data),
                             np.asarray(T.as_tensor(self.pixels).data),
                             np.asarray(T.as_tensor(self.points).data))


def pyramid_from_config(cfg: Config) -> PatchPyramid:
    return build_pyramid(cfg.camera.height, cfg.camera.width, tuple(cfg.patch.pyramid_base),
                         cfg.patch.pyramid_levels)


class MatchingNetwork(Module):
    def __init__(self, cfg: Config, seed: int):
        super().__init__()
        rng = np.random.default_rng(seed)
        m = cfg.model
        self.cfg = cfg
        self.pyramid = pyramid_from_config(cfg)
        self.coarse_grid = tuple(cfg.patch.coarse_grid)
        self.finest = self.pyramid.finest.shape
        self.extractor = self.add_child("extractor", ToyExtractor(
            (cfg.camera.height, cfg.camera.width), self.coarse_grid, m.d, m.fine_dim, rng,
            hidden=m.hidden, point_fourier=m.point_fourier, window=m.window, node_knn=m.node_knn))
        self.pos2d = self.add_child("pos2d", Linear(2 * (2 * m.fourier_L + 1), m.d, rng, gain=0.5))
        self.pos3d = self.add_child("pos3d", Linear(3 * (2 * m.fourier_L + 1), m.d, rng, gain=0.5))
        self.transformer = self.add_child("transformer", Transformer(
            m.d, m.heads, m.n_blocks, rng, m.use_self_attention, m.use_cross_attention))
        self.pyramid_head = self.add_child("pyramid", PyramidHead(m.d, self.pyramid.K, rng))

    def refine(self, feats: BackboneFeatures, node_points: np.ndarray) -> MatchFeatures:
        cfg = self.cfg
        f2 = resize_grid(feats.f2d_coarse, self.coarse_grid, self.finest)
        centers = self.pyramid.finest.centers
        f2 = add_positional(f2, normalized_pixel_coords(centers, cfg.camera.width, cfg.camera.height),
                            cfg.model.fourier_L, self.pos2d)
        f3 = add_positional(feats.f3d_coarse, node_points, cfg.model.fourier_L, self.pos3d)
        h2, h3 = self.transformer(f2, f3)
        levels = pyramid_features(h2, self.finest, self.pyramid.K, self.pyramid_head)
        return MatchFeatures(
            levels=[T.l2_normalize(x) for x in levels],
            nodes=T.l2_normalize(h3),
            # dead-ReLU rows can be exactly zero; map them to zero rather than fail
            pixels=T.l2_normalize(feats.f2d_fine, eps=1e-12),
            points=T.l2_normalize(feats.f3d_fine, eps=1e-12),
        )

    def forward(self, image, points, node_points, assignment, cache2d=None, cache3d=None) -> MatchFeatures:
        feats = self.extractor.extract(image, points, node_points, assignment, cache2d, cache3d)
        return self.refine(feats, node_points)

    __call__ = forward
