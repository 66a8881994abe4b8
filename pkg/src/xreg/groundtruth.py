"""Bilateral 2D/3D overlap, coarse/fine supervision labels and pair filtering."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (CameraIntrinsics, DepthMap, RigidTransform, depth_to_points,
                       project_unchecked, unproject)


@dataclass(frozen=True)
class OverlapThresholds:
    dist3d: float = 0.0375
    dist2d: float = 8.0
    patch_pos: float = 0.30
    patch_neg: float = 0.20
    fine_pos3d: float = 0.0375
    fine_pos2d: float = 8.0
    fine_neg3d: float = 0.10
    fine_neg2d: float = 12.0

    def __post_init__(self):
        if not 0 < self.patch_neg < self.patch_pos <= 1:
            raise ValueError("need 0 < patch_neg < patch_pos <= 1")
        if not self.fine_pos3d < self.fine_neg3d or not self.fine_pos2d < self.fine_neg2d:
            raise ValueError("fine positive bands must lie below negative bands")


class Label(enum.IntEnum):
    NEGATIVE = -1
    IGNORE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class PatchLabel:
    label: Label
    overlap_2d: float
    overlap_3d: float

    @property
    def final(self) -> float:
        return min(self.overlap_2d, self.overlap_3d)


def point_overlapped(p, pixel, depth: float, t_gt: RigidTransform, k: CameraIntrinsics,
                     th: OverlapThresholds = OverlapThresholds()) -> bool:
    """Whether a cloud point and a pixel (with its depth) see the same surface spot."""
    d = float(depth)
    if not (np.isfinite(d) and d > 0):
        return False
    q = t_gt.apply(np.asarray(p, dtype=np.float64))
    if q[2] <= 0:
        return False
    pix = np.asarray(pixel, dtype=np.float64)
    lifted = unproject(pix, d, k)
    uv, _ = project_unchecked(q, k)
    return bool(np.linalg.norm(q - lifted) < th.dist3d and np.linalg.norm(uv - pix) < th.dist2d)


def _pair_distances(cam_pts, proj_uv, pix_xyz, pix_uv, pi, qi):
    d3 = np.sqrt(((cam_pts[qi] - pix_xyz[pi]) ** 2).sum(-1))
    d2 = np.sqrt(((proj_uv[qi] - pix_uv[pi]) ** 2).sum(-1))
    return d3, d2


def overlap_pairs(points: np.ndarray, t_gt: RigidTransform, depth: DepthMap, k: CameraIntrinsics,
                  dist3d: float, dist2d: float, pixel_subset: np.ndarray | None = None):
    """All overlapping (pixel, point) pairs.

    Candidates come from a KD-tree radius query on 3D distance and are then
    filtered with the exact strict-inequality predicate, so the result equals
    exhaustive enumeration.

    Returns ``(pixel_flat_index, point_index)`` arrays.
    """
    flat, pix_xyz = depth_to_points(depth, k)
    if pixel_subset is not None:
        keep = np.isin(flat, pixel_subset)
        flat, pix_xyz = flat[keep], pix_xyz[keep]
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64))
    if len(flat) == 0 or len(points) == 0:
        return empty
    w = depth.shape[1]
    pix_uv = np.stack([flat % w, flat // w], axis=1).astype(np.float64)
    cam = t_gt.apply(points)
    proj, front = project_unchecked(cam, k)
    cand = np.flatnonzero(front)
    if len(cand) == 0:
        return empty
    tree = cKDTree(pix_xyz)
    # pad the radius slightly; the exact predicate below decides
    lists = tree.query_ball_point(cam[cand], r=dist3d * (1 + 1e-9) + 1e-12)
    lens = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    if lens.sum() == 0:
        return empty
    qi = np.repeat(cand, lens)
    pi = np.fromiter((j for x in lists for j in x), dtype=np.int64, count=int(lens.sum()))
    d3, d2 = _pair_distances(cam, proj, pix_xyz, pix_uv, pi, qi)
    ok = (d3 < dist3d) & (d2 < dist2d)
    return flat[pi[ok]], qi[ok]


def patch_overlap(img_patch, pt_patch, t_gt: RigidTransform, depth: DepthMap, k: CameraIntrinsics,
                  th: OverlapThresholds = OverlapThresholds()):
    """Overlap of one image patch (flat pixel indices) with one point patch (points, cloud frame).

    Returns ``(overlap_2d, overlap_3d, final)``; invalid-depth pixels are not counted.
    """
    img_patch = np.asarray(img_patch, dtype=np.int64).ravel()
    pts = np.asarray(pt_patch, dtype=np.float64).reshape(-1, 3)
    valid = depth.mask.ravel()[img_patch]
    n_pix = int(valid.sum())
    if n_pix == 0 or len(pts) == 0:
        return 0.0, 0.0, 0.0
    pi, qi = overlap_pairs(pts, t_gt, depth, k, th.dist3d, th.dist2d, pixel_subset=img_patch)
    o2d = len(np.unique(pi)) / n_pix
    o3d = len(np.unique(qi)) / len(pts)
    return o2d, o3d, min(o2d, o3d)


def label_patch_pair(overlap_2d: float, overlap_3d: float,
                     th: OverlapThresholds = OverlapThresholds()) -> PatchLabel:
    if overlap_2d >= th.patch_pos and overlap_3d >= th.patch_pos:
        lab = Label.POSITIVE
    elif overlap_2d < th.patch_neg and overlap_3d < th.patch_neg:
        lab = Label.NEGATIVE
    else:
        lab = Label.IGNORE
    return PatchLabel(lab, float(overlap_2d), float(overlap_3d))


def label_matrix(o2d: np.ndarray, o3d: np.ndarray, th: OverlapThresholds = OverlapThresholds()) -> np.ndarray:
    """Vectorized :func:`label_patch_pair`, returning int8 labels."""
    out = np.zeros(np.shape(o2d), dtype=np.int8)
    out[(o2d >= th.patch_pos) & (o3d >= th.patch_pos)] = Label.POSITIVE
    out[(o2d < th.patch_neg) & (o3d < th.patch_neg)] = Label.NEGATIVE
    return out


def patch_overlap_matrix(pixel_patch_ids, n_patches: int, members, points: np.ndarray,
                         t_gt: RigidTransform, depth: DepthMap, k: CameraIntrinsics,
                         th: OverlapThresholds = OverlapThresholds()):
    """Overlap ratios between every image patch and every point patch.

    ``pixel_patch_ids`` is a list of arrays (one per pyramid level) giving the
    pooled patch id of each flat pixel, so patches of all levels are handled in
    one pass. ``members`` lists point indices per node.

    Returns dense ``(o2d, o3d)`` arrays of shape (n_patches, n_nodes).
    """
    n_nodes = len(members)
    node_of_point = np.full(len(points), -1, dtype=np.int64)
    for n, m in enumerate(members):
        node_of_point[m] = n
    node_sizes = np.array([len(m) for m in members], dtype=np.float64)
    o2d = np.zeros((n_patches, n_nodes))
    o3d = np.zeros((n_patches, n_nodes))
    pi, qi = overlap_pairs(points, t_gt, depth, k, th.dist3d, th.dist2d)
    valid = depth.mask.ravel()
    node = node_of_point[qi]
    keep = node >= 0
    pi, qi, node = pi[keep], qi[keep], node[keep]
    n_pix = valid.size
    n_pts = max(len(points), 1)
    for ids in pixel_patch_ids:
        n_valid = np.bincount(ids[valid], minlength=n_patches).astype(np.float64)
        pn = ids[pi] * n_nodes + node
        # distinct pixels per (patch, node)
        key = np.unique(pn * n_pix + pi) // n_pix
        cnt = np.bincount(key, minlength=n_patches * n_nodes).reshape(n_patches, n_nodes).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            r2 = np.where(n_valid[:, None] > 0, cnt / n_valid[:, None], 0.0)
        # distinct points per (patch, node)
        key = np.unique(pn * n_pts + qi) // n_pts
        cnt = np.bincount(key, minlength=n_patches * n_nodes).reshape(n_patches, n_nodes).astype(np.float64)
        r3 = cnt / np.maximum(node_sizes, 1.0)[None, :]
        touched = n_valid > 0
        o2d[touched] += r2[touched]
        o3d[touched] += r3[touched]
    return o2d, o3d


def label_pixel_point(pixel, depth: float, point, t_gt: RigidTransform, k: CameraIntrinsics,
                      th: OverlapThresholds = OverlapThresholds()) -> Label:
    lab = label_pixel_point_matrix(np.asarray(pixel, float)[None], np.asarray([depth], float),
                                   np.asarray(point, float)[None], t_gt, k, th)
    return Label(int(lab[0, 0]))


def label_pixel_point_matrix(pix_uv: np.ndarray, pix_depth: np.ndarray, points: np.ndarray,
                             t_gt: RigidTransform, k: CameraIntrinsics,
                             th: OverlapThresholds = OverlapThresholds()) -> np.ndarray:
    """Fine labels for every (pixel, point) combination, shape (n_pixels, n_points)."""
    lifted = unproject(pix_uv, pix_depth, k)
    cam = t_gt.apply(points)
    proj, front = project_unchecked(cam, k)
    d3 = np.sqrt(((lifted[:, None, :] - cam[None, :, :]) ** 2).sum(-1))
    d2 = np.sqrt(((pix_uv[:, None, :] - proj[None, :, :]) ** 2).sum(-1))
    d2 = np.where(front[None, :], d2, np.inf)
    out = np.zeros(d3.shape, dtype=np.int8)
    out[(d3 < th.fine_pos3d) & (d2 < th.fine_pos2d)] = Label.POSITIVE
    out[(d3 > th.fine_neg3d) | (d2 > th.fine_neg2d)] = Label.NEGATIVE
    return out


def scene_overlap(depth: DepthMap, k: CameraIntrinsics, t_gt: RigidTransform, points: np.ndarray,
                  dist3d: float = 0.0375) -> float:
    """Bilateral 3D-only overlap between an RGB-D frame and a cloud, min-reduced."""
    _, pix_xyz = depth_to_points(depth, k)
    if len(pix_xyz) == 0 or len(points) == 0:
        return 0.0
    cam = t_gt.apply(points)
    d_img, _ = cKDTree(cam).query(pix_xyz, k=1)
    d_pts, _ = cKDTree(pix_xyz).query(cam, k=1)
    return float(min(np.mean(d_img < dist3d), np.mean(d_pts < dist3d)))


def filter_pairs(images, fragments, min_overlap: float = 0.30, dist3d: float = 0.0375):
    """Keep every (image, fragment) combination whose scene overlap is at least ``min_overlap``.

    ``images`` is a sequence of ``(DepthMap, CameraIntrinsics, camera_to_world)``
    and ``fragments`` a sequence of world-frame point arrays. Returns a list of
    ``(image_index, fragment_index, overlap)``.
    """
    out = []
    for i, (depth, k, pose) in enumerate(images):
        t_gt = pose.inverse()
        for j, frag in enumerate(fragments):
            pts = frag.points if hasattr(frag, "points") else np.asarray(frag)
            ov = scene_overlap(depth, k, t_gt, pts, dist3d)
            if ov >= min_overlap:
                out.append((i, j, ov))
    return out


def labels_to_json(o2d: np.ndarray, o3d: np.ndarray, th: OverlapThresholds = OverlapThresholds(),
                   only_labeled: bool = True) -> str:
    """JSON array of ``{"i","j","o2d","o3d","label"}`` records (i = pooled patch, j = node)."""
    labels = label_matrix(o2d, o3d, th)
    recs = []
    for i, j in zip(*np.nonzero(labels != Label.IGNORE if only_labeled else np.ones_like(labels, bool))):
        recs.append({"i": int(i), "j": int(j), "o2d": float(o2d[i, j]), "o3d": float(o3d[i, j]),
                     "label": Label(int(labels[i, j])).name.lower()})
    return json.dumps(recs)
