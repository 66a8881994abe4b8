"""Image / point-cloud pair construction, per-pair preprocessing and the on-disk dataset layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import Config
from .errors import EmptyDataset, FormatError
from .geometry import CameraIntrinsics, DepthMap, RigidTransform, fuse_depth_frames, grid_subsample
from .groundtruth import OverlapThresholds, filter_pairs, labels_to_json, patch_overlap_matrix
from .patching import PatchPyramid, PointPatchGraph, build_pyramid, point_to_node
from .synth import Orbit, SceneSpec, calibrate_radius, desk_scene, generate_scene


@dataclass
class Pair:
    pair_id: str
    split: str
    image: np.ndarray
    depth: DepthMap
    intrinsics: CameraIntrinsics
    cam_pose: RigidTransform          # camera to world
    points: np.ndarray                # fragment, world frame
    overlap: float
    meta: dict = field(default_factory=dict)

    @property
    def t_gt(self) -> RigidTransform:
        """Ground-truth transform from the cloud frame to the camera frame."""
        return self.cam_pose.inverse()


def thresholds_from_config(cfg: Config) -> OverlapThresholds:
    o = cfg.overlap
    return OverlapThresholds(o.dist3d, o.dist2d, o.patch_pos, o.patch_neg,
                             o.fine_pos3d, o.fine_pos2d, o.fine_neg3d, o.fine_neg2d)


def intrinsics_from_config(cfg: Config) -> CameraIntrinsics:
    c = cfg.camera
    return CameraIntrinsics(c.fx, c.fy, c.cx, c.cy, c.width, c.height)


def build_pairs(samples, min_overlap: float = 0.30, window: int = 25, stride: int | None = None,
                voxel: float = 0.025, dist3d: float = 0.0375, split: str = "train", prefix: str = "p"):
    """Fuse consecutive frames into fragments and keep image-fragment combinations that overlap.

    The image of a window is its first frame. Raises :class:`EmptyDataset`
    when nothing qualifies.
    """
    samples = list(samples)
    if len(samples) < 1:
        raise EmptyDataset("no samples")
    stride = window if stride is None else stride
    starts = list(range(0, len(samples) - window + 1, stride)) or [0]
    images, fragments = [], []
    for s in starts:
        frames = samples[s:s + window]
        fragments.append(fuse_depth_frames([(f.depth, f.intrinsics, f.pose) for f in frames], voxel).points)
        images.append(samples[s])
    kept = filter_pairs([(im.depth, im.intrinsics, im.pose) for im in images], fragments, min_overlap, dist3d)
    if not kept:
        raise EmptyDataset("no image/fragment combination reaches the overlap threshold")
    out = []
    for i, j, ov in kept:
        im = images[i]
        out.append(Pair(f"{prefix}_i{i:03d}_f{j:03d}", split, im.image, im.depth, im.intrinsics, im.pose,
                        fragments[j], float(ov), {"image_index": i, "fragment_index": j}))
    return out


def sequence_plan(cfg: Config):
    """``(name, split, regime, scene, primitives, orbit)`` for every trajectory; radii are calibrated.

    Train orbits of a regime start at evenly spaced azimuths, so with enough
    windows they sweep the whole room. Test orbits start half a window
    later at an elevation between the train ones: held-out viewpoints of
    surfaces the training views also saw.
    """
    s = cfg.synth
    k = intrinsics_from_config(cfg)
    step = np.deg2rad(s.window_arc_deg) / s.stride
    half = 0.5 * np.deg2rad(s.window_arc_deg)
    plan = []
    for scene in range(s.scenes):
        prims = desk_scene(s.seed + scene)
        for regime, target, elev in (("near", s.near_depth, 0.70), ("far", s.far_depth, 0.60)):
            radius = calibrate_radius(prims, k, target, Orbit(elevation=elev), max_depth=s.max_depth)
            off = 0.0 if regime == "near" else np.pi / 4
            for q in range(s.train_sequences + s.test_sequences):
                if q < s.train_sequences:
                    split, start = "train", 2 * np.pi * q / s.train_sequences + off
                    e = elev + 0.08 * (q % 2)
                else:
                    j = q - s.train_sequences
                    split, start = "test", 2 * np.pi * j / s.test_sequences + off + half
                    e = elev + 0.04
                orbit = Orbit(radius=radius, elevation=e, start=start, step=step, jitter=0.04, phase=float(q))
                plan.append((f"s{scene}_{regime}{q}", split, regime, scene, prims, orbit))
    return plan


def synthesize(cfg: Config):
    """Render all trajectories and build the pair dataset."""
    s = cfg.synth
    k = intrinsics_from_config(cfg)
    n_frames = (s.windows_per_sequence - 1) * s.stride + s.window
    pairs = []
    for name, split, regime, scene, prims, orbit in sequence_plan(cfg):
        # only frames inside some fusion window are rendered
        ids = sorted({w * s.stride + f for w in range(s.windows_per_sequence) for f in range(s.window)})
        spec = SceneSpec(s.seed + scene, prims, k, [orbit.pose(i) for i in ids], scene, s.max_depth)
        samples = generate_scene(spec)
        by_id = dict(zip(ids, samples))
        seq = [by_id[i] for i in range(n_frames) if i in by_id]
        try:
            got = build_pairs(seq, s.min_overlap, s.window, s.window if s.stride >= s.window else s.stride,
                              cfg.cloud.voxel, cfg.overlap.dist3d, split, name)
        except EmptyDataset:
            continue
        for p in got:
            p.meta.update({"sequence": name, "regime": regime, "scene": scene})
        pairs.extend(got)
    if not pairs:
        raise EmptyDataset("synthesis produced no pairs")
    return pairs


@dataclass
class PreparedPair:
    """Everything the matcher and the losses need for one pair."""

    pair: Pair
    graph: PointPatchGraph
    pyramid: PatchPyramid
    pixel_patch_ids: list
    o2d: np.ndarray | None = None
    o3d: np.ndarray | None = None
    fine_pairs: tuple | None = None

    @property
    def points(self) -> np.ndarray:
        return self.pair.points

    @property
    def nodes(self) -> np.ndarray:
        return self.graph.nodes


def pixel_patch_ids(pyramid: PatchPyramid) -> list:
    return [lv.patch_of_pixel() + int(pyramid.offsets[i]) for i, lv in enumerate(pyramid.levels)]


def prepare_pair(pair: Pair, cfg: Config, with_overlap: bool = True) -> PreparedPair:
    nodes = grid_subsample(pair.points, cfg.cloud.node_voxel).points
    graph = point_to_node(pair.points, nodes, cfg.cloud.min_members)
    pyr = build_pyramid(cfg.camera.height, cfg.camera.width, tuple(cfg.patch.pyramid_base),
                        cfg.patch.pyramid_levels)
    ids = pixel_patch_ids(pyr)
    prep = PreparedPair(pair, graph, pyr, ids)
    if with_overlap:
        prep.o2d, prep.o3d = patch_overlap_matrix(ids, pyr.total_patches, graph.members, pair.points,
                                                  pair.t_gt, pair.depth, pair.intrinsics,
                                                  thresholds_from_config(cfg))
    return prep


# ---------------------------------------------------------------- disk layout

def write_dataset(root, pairs, cfg: Config, labels: bool = True) -> None:
    """``root/pairs.json`` plus per-pair image, depth, pose, cloud and coarse-label files."""
    root = Path(root)
    for sub in ("images", "depth", "poses", "clouds", "labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    io.write_json(root / "config.json", cfg.to_dict())
    io.write_intrinsics(root / "intrinsics.json", pairs[0].intrinsics)
    records = []
    written_img, written_cloud = set(), set()
    th = thresholds_from_config(cfg)
    for p in pairs:
        seq = p.meta.get("sequence", "seq")
        img_key = f"{seq}_{p.meta['image_index']:03d}"
        cloud_key = f"{seq}_{p.meta['fragment_index']:03d}"
        if img_key not in written_img:
            io.write_image(root / "images" / f"{img_key}.npy", p.image)
            io.write_depth(root / "depth" / f"{img_key}.bin", p.depth)
            io.write_pose(root / "poses" / f"{img_key}.json", p.cam_pose)
            written_img.add(img_key)
        if cloud_key not in written_cloud:
            io.write_cloud(root / "clouds" / f"{cloud_key}.bin", p.points)
            written_cloud.add(cloud_key)
        rec = {"id": p.pair_id, "split": p.split, "overlap": p.overlap,
               "image": f"images/{img_key}.npy", "depth": f"depth/{img_key}.bin",
               "pose": f"poses/{img_key}.json", "cloud": f"clouds/{cloud_key}.bin"}
        rec.update({k: v for k, v in p.meta.items()})
        if labels:
            prep = prepare_pair(p, cfg)
            (root / "labels" / f"{p.pair_id}.json").write_text(labels_to_json(prep.o2d, prep.o3d, th) + "\n")
            rec["labels"] = f"labels/{p.pair_id}.json"
        records.append(rec)
    io.write_json(root / "pairs.json", records)


def read_dataset(root, split: str | None = None) -> list:
    """Load pairs written by :func:`write_dataset`. Clouds are re-read as float32-rounded values."""
    root = Path(root)
    idx = root / "pairs.json"
    if not idx.exists():
        raise FormatError(f"{root}: no pairs.json")
    k = io.read_intrinsics(root / "intrinsics.json")
    out = []
    for rec in io.read_json(idx):
        if split is not None and rec["split"] != split:
            continue
        meta = {kk: v for kk, v in rec.items()
                if kk not in ("id", "split", "overlap", "image", "depth", "pose", "cloud", "labels")}
        out.append(Pair(rec["id"], rec["split"], io.read_image(root / rec["image"]),
                        io.read_depth(root / rec["depth"]), k, io.read_pose(root / rec["pose"]),
                        io.read_cloud(root / rec["cloud"]).points, float(rec["overlap"]), meta))
    if not out:
        raise EmptyDataset(f"{root}: no pairs" + (f" in split {split!r}" if split else ""))
    return out
