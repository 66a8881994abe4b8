"""Coarse multi-scale patch matching and fine dense pixel-point matching."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .patching import PatchPyramid


def feature_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between all rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


def topk_mask(dist: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Boolean mask of the k smallest entries along ``axis``; ties go to the lower index."""
    n = dist.shape[axis]
    kk = min(k, n)
    order = np.argsort(dist, axis=axis, kind="stable")
    idx = np.take(order, np.arange(kk), axis=axis)
    mask = np.zeros(dist.shape, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=axis)
    return mask


def mutual_topk(a, b, k: int, return_distances: bool = False):
    """Pairs ``(i, j)`` where each side is among the other's k nearest rows.

    Output is sorted by ascending distance, then ``i``, then ``j``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        pairs = np.zeros((0, 2), dtype=np.int64)
        return (pairs, np.zeros(0)) if return_distances else pairs
    dist = feature_distances(a, b)
    mutual = topk_mask(dist, k, axis=1) & topk_mask(dist, k, axis=0)
    i, j = np.nonzero(mutual)
    d = dist[i, j]
    order = np.lexsort((j, i, d))
    pairs = np.stack([i[order], j[order]], axis=1).astype(np.int64)
    return (pairs, d[order]) if return_distances else pairs


def similarity_from_distance(d):
    """Cosine similarity of unit vectors at Euclidean distance ``d``."""
    return 1.0 - 0.5 * np.asarray(d) ** 2


@dataclass
class PatchCorrespondenceSet:
    """Coarse matches; ``pooled`` indexes the all-level patch pool."""

    level: np.ndarray
    row: np.ndarray
    col: np.ndarray
    pooled: np.ndarray
    node: np.ndarray
    score: np.ndarray

    def __len__(self):
        return len(self.node)

    def entries(self):
        for t in zip(self.level, self.row, self.col, self.node, self.score):
            yield (int(t[0]), int(t[1]), int(t[2])), int(t[3]), float(t[4])

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z, np.zeros(0))


def pool_levels(level_feats) -> np.ndarray:
    return np.concatenate([np.asarray(f, dtype=np.float64) for f in level_feats], axis=0)


def coarse_match(level_feats, node_feats, pyramid: PatchPyramid, k: int = 3,
                 max_coarse: int | None = 256) -> PatchCorrespondenceSet:
    """Mutual top-k between the pooled patches of every pyramid level and the point nodes."""
    pool = pool_levels(level_feats)
    if pool.shape[0] != pyramid.total_patches:
        raise ValueError(f"{pool.shape[0]} patch features for {pyramid.total_patches} patches")
    pairs, dist = mutual_topk(pool, node_feats, k, return_distances=True)
    if max_coarse is not None and len(pairs) > max_coarse:
        pairs, dist = pairs[:max_coarse], dist[:max_coarse]
    if len(pairs) == 0:
        return PatchCorrespondenceSet.empty()
    lv = np.array([pyramid.unpool(int(p)) for p in pairs[:, 0]], dtype=np.int64).reshape(-1, 3)
    return PatchCorrespondenceSet(lv[:, 0], lv[:, 1], lv[:, 2], pairs[:, 0], pairs[:, 1],
                                  similarity_from_distance(dist))


def sample_patch_pixels(pyramid: PatchPyramid, level: int, row: int, col: int) -> np.ndarray:
    """Flat indices of the stride-2 lattice inside one patch (1/4 of its pixels)."""
    grid = pyramid.levels[level]
    r0, r1, c0, c1 = grid.bounds(row * grid.grid_w + col)
    rr, cc = np.meshgrid(np.arange(r0, r1, 2), np.arange(c0, c1, 2), indexing="ij")
    return (rr * grid.width + cc).ravel()


@dataclass
class LocalMatches:
    pixel: np.ndarray
    point: np.ndarray
    score: np.ndarray
    patch: np.ndarray = field(default=None)
    node: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.pixel)


def fine_match(entry, pyramid: PatchPyramid, pixel_feats, point_feats, members,
               k_fine: int = 2) -> LocalMatches:
    """Dense matches inside one patch correspondence.

    ``entry`` is ``((level, row, col), node)``; ``members`` are the node's
    point indices.
    """
    (level, row, col), node = entry[0], entry[1]
    members = np.asarray(members, dtype=np.int64)
    pooled = pyramid.pool_index(level, row, col)
    z = np.zeros(0, dtype=np.int64)
    if len(members) == 0:
        return LocalMatches(z, z, np.zeros(0), z, z)
    pix = sample_patch_pixels(pyramid, level, row, col)
    pairs, dist = mutual_topk(np.asarray(pixel_feats)[pix], np.asarray(point_feats)[members], k_fine,
                              return_distances=True)
    n = len(pairs)
    return LocalMatches(pix[pairs[:, 0]], members[pairs[:, 1]], similarity_from_distance(dist),
                        np.full(n, pooled, dtype=np.int64), np.full(n, node, dtype=np.int64))


@dataclass
class DenseCorrespondenceSet:
    pixel: np.ndarray
    point: np.ndarray
    uv: np.ndarray
    xyz: np.ndarray
    score: np.ndarray
    patch: np.ndarray
    node: np.ndarray

    def __len__(self):
        return len(self.pixel)

    def to_jsonl(self) -> str:
        lines = []
        for (u, v), (x, y, zz), s in zip(self.uv, self.xyz, self.score):
            lines.append(json.dumps({"u": float(u), "v": float(v), "x": float(x), "y": float(y),
                                     "z": float(zz), "score": float(s)}))
        return "\n".join(lines) + ("\n" if lines else "")


def assemble(local_sets, width: int, points: np.ndarray) -> DenseCorrespondenceSet:
    """Concatenate local matches and drop repeated (pixel, point) pairs, keeping the best score.

    Result order: score descending, then pixel index, then point index.
    """
    local_sets = list(local_sets)
    z = np.zeros(0, dtype=np.int64)
    cat = (lambda name, dt: np.concatenate([np.asarray(getattr(s, name), dtype=dt) for s in local_sets])
           if local_sets else np.zeros(0, dtype=dt))
    pixel, point, score = cat("pixel", np.int64), cat("point", np.int64), cat("score", np.float64)
    patch = cat("patch", np.int64) if local_sets else z
    node = cat("node", np.int64) if local_sets else z
    if len(pixel) == 0:
        return DenseCorrespondenceSet(z, z, np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), z, z)
    # best score first; among equal scores keep the earliest occurrence
    order = np.lexsort((np.arange(len(pixel)), -score))
    keys = pixel[order] * (int(point.max()) + 1) + point[order]
    _, first = np.unique(keys, return_index=True)
    keep = order[first]
    final = keep[np.lexsort((point[keep], pixel[keep], -score[keep]))]
    pix = pixel[final]
    uv = np.stack([pix % width, pix // width], axis=1).astype(np.float64)
    return DenseCorrespondenceSet(pix, point[final], uv, np.asarray(points)[point[final]], score[final],
                                  patch[final], node[final])

