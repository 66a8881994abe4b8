import numpy as np
import pytest

from conftest import tiny_config
from xreg import io
from xreg.dataset import build_pairs, prepare_pair, read_dataset
from xreg.errors import EmptyDataset, FormatError
from xreg.geometry import CameraIntrinsics, DepthMap, RigidTransform, look_at, random_rotation
from xreg.synth import (Appearance, Box, Orbit, Plane, SceneSample, SceneSpec, Sphere, calibrate_radius,
                        camera_rays, desk_scene, generate_scene, mean_depth, render, value_noise)
from xreg.training import train

K = CameraIntrinsics(146.25, 146.25, 79.5, 59.5, 160, 120)


def test_value_noise_range_and_determinism():
    p = np.random.default_rng(0).uniform(-3, 3, (1000, 3))
    a = value_noise(p, 7, 4.0)
    assert np.all((a >= 0) & (a < 1))
    assert np.array_equal(a, value_noise(p, 7, 4.0))
    assert not np.array_equal(a, value_noise(p, 8, 4.0))
    img = Appearance(seed=3)(p)
    assert np.all((img >= 0) & (img <= 1))


def test_plane_depth_is_distance():
    pose = look_at((0, 0, 2.0), (0, 0, 0), up=(0, 1, 0))
    image, depth = render([Plane((0, 0, 0), (0, 0, 1))], K, pose)
    assert np.all(np.abs(depth - 2.0) < 1e-12)
    assert image.shape == (120, 160)


def test_sphere_hits_on_surface():
    c, r = np.array([0.1, -0.05, 0.0]), 0.3
    pose = look_at((0.0, -1.5, 0.4), c)
    _, depth = render([Sphere(tuple(c), r)], K, pose)
    o, d = camera_rays(K, pose)
    hit = np.isfinite(depth.ravel())
    assert hit.sum() > 100
    pts = o[hit] + d[hit] * depth.ravel()[hit][:, None]
    assert np.max(np.abs(np.linalg.norm(pts - c, axis=1) - r)) < 1e-6


def test_box_and_max_depth():
    pose = look_at((0, 0, 3.0), (0, 0, 0), up=(0, 1, 0))
    prims = [Plane((0, 0, 0), (0, 0, 1)), Box((-0.2, -0.2, 0.0), (0.2, 0.2, 1.0))]
    _, depth = render(prims, K, pose)
    assert depth[59, 79] == pytest.approx(2.0, abs=1e-12)
    assert depth[0, 0] == pytest.approx(3.0, abs=1e-12)
    _, clipped = render(prims, K, pose, max_depth=2.5)
    assert np.isnan(clipped[0, 0]) and clipped[59, 79] == pytest.approx(2.0)


def test_render_deterministic():
    prims = desk_scene(3)
    pose = Orbit(radius=1.2).pose(4)
    a = render(prims, K, pose)
    b = render(desk_scene(3), K, pose)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1], equal_nan=True)


@pytest.mark.parametrize("target", [1.0, 2.0])
def test_radius_calibration_hits_mean_depth(target):
    prims = desk_scene(0)
    orbit = Orbit(elevation=0.65)
    r = calibrate_radius(prims, K, target, orbit, max_depth=3.0)
    angles = np.arange(6) * (2 * np.pi / 6) + 0.3
    poses = [Orbit(orbit.target, r, orbit.elevation, float(a), 0.0, 0.0).pose(0) for a in angles]
    md = mean_depth(prims, K, poses, max_depth=3.0)
    assert abs(md - target) <= 0.10 * target


def test_identical_pose_pair_retained():
    spec = SceneSpec(0, desk_scene(0), K, [Orbit(radius=1.3).pose(0)])
    samples = generate_scene(spec)
    pairs = build_pairs(samples, window=1, voxel=0.01)
    assert len(pairs) == 1 and pairs[0].overlap == 1.0


def test_build_pairs_empty():
    spec = SceneSpec(0, desk_scene(0), K, [Orbit(radius=1.3).pose(0), Orbit(radius=1.3, start=np.pi).pose(0)])
    with pytest.raises(EmptyDataset):
        build_pairs(generate_scene(spec), min_overlap=1.01, window=1)


def test_io_roundtrips(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 3))
    io.write_cloud(tmp_path / "c.bin", pts)
    back = io.read_cloud(tmp_path / "c.bin").points
    assert np.array_equal(back, pts.astype(np.float32).astype(np.float64))
    z = rng.uniform(1, 2, (6, 7))
    z[0, 0] = np.nan
    io.write_depth(tmp_path / "d.bin", DepthMap(z))
    assert np.array_equal(io.read_depth(tmp_path / "d.bin").values, z.astype(np.float32).astype(float),
                          equal_nan=True)
    t = RigidTransform(random_rotation(rng), rng.normal(size=3))
    io.write_pose(tmp_path / "p.json", t)
    assert np.array_equal(io.read_pose(tmp_path / "p.json").matrix, t.matrix)
    io.write_intrinsics(tmp_path / "k.json", K)
    assert io.read_intrinsics(tmp_path / "k.json") == K
    img = rng.random((4, 5))
    io.write_image(tmp_path / "i.npy", img)
    assert np.array_equal(io.read_image(tmp_path / "i.npy"), img.astype(np.float32))
    (tmp_path / "bad.bin").write_bytes(b"garbage" * 4)
    for fn in (io.read_cloud, io.read_depth):
        with pytest.raises(FormatError):
            fn(tmp_path / "bad.bin")
    (tmp_path / "bad.json").write_text("[[1, 2]]")
    with pytest.raises(FormatError):
        io.read_pose(tmp_path / "bad.json")
    (tmp_path / "c.jsonl").write_text('{"u": 1, "v": 2, "x": 0, "y": 0, "z": 1}\n{"u": 1}\n')
    with pytest.raises(FormatError, match=":2:"):
        io.read_correspondences(tmp_path / "c.jsonl")


def test_dataset_regimes_and_roundtrip(tiny_dataset):
    cfg, pairs, root = tiny_dataset
    regimes = {p.meta["regime"] for p in pairs}
    splits = {p.split for p in pairs}
    assert regimes == {"near", "far"} and splits == {"train", "test"}
    assert all(p.overlap >= cfg.synth.min_overlap for p in pairs)
    near = np.mean([np.nanmean(p.depth.values) for p in pairs if p.meta["regime"] == "near"])
    far = np.mean([np.nanmean(p.depth.values) for p in pairs if p.meta["regime"] == "far"])
    assert near < far
    back = read_dataset(root)
    assert [p.pair_id for p in back] == [p.pair_id for p in pairs]
    for a, b in zip(pairs, back):
        assert np.array_equal(b.points, a.points.astype(np.float32).astype(np.float64))
        assert np.allclose(a.cam_pose.matrix, b.cam_pose.matrix, atol=0)
    assert len(read_dataset(root, "test")) == sum(p.split == "test" for p in pairs)
    with pytest.raises(EmptyDataset):
        read_dataset(root, "nope")
    with pytest.raises(FormatError):
        read_dataset(root / "missing")


def test_prepared_pair_has_positive_labels(tiny_dataset):
    cfg, pairs, _ = tiny_dataset
    prep = prepare_pair(pairs[0], cfg)
    assert prep.o2d.shape == (prep.pyramid.total_patches, len(prep.graph.members))
    final = np.minimum(prep.o2d, prep.o3d)
    assert (final >= 0.3).any() and final.max() <= 1.0


def test_training_probe(tiny_dataset):
    cfg, pairs, _ = tiny_dataset
    train_pairs = [p for p in pairs if p.split == "train"][:2]
    init = train(train_pairs, cfg, seed=0, epochs=0)
    fresh = type(init)(cfg, 0)
    for n, p in init.parameters().items():
        assert np.array_equal(p.data, fresh.parameters()[n].data)
    logs_a, logs_b = [], []
    a = train(train_pairs, cfg, seed=0, epochs=3, lr=1e-2, log=logs_a.append)
    b = train(train_pairs, cfg, seed=0, epochs=3, lr=1e-2, log=logs_b.append)
    assert logs_a == logs_b
    for n, p in a.parameters().items():
        assert np.array_equal(p.data, b.parameters()[n].data)
    assert [r["step"] for r in logs_a] == list(range(6))
    first = np.mean([r["total"] for r in logs_a[:2]])
    last = np.mean([r["total"] for r in logs_a[-2:]])
    assert last < first
