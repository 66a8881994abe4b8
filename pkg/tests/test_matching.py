import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xreg.io import read_correspondences
from xreg.matching import (LocalMatches, assemble, coarse_match, feature_distances, fine_match,
                           mutual_topk, sample_patch_pixels, similarity_from_distance)
from xreg.patching import build_pyramid


def brute_mutual(a, b, k):
    """Pairs (i, j) where j is among i's k nearest and i among j's k nearest (lower index wins ties)."""
    d = np.array([[np.sqrt(((x - y) ** 2).sum()) for y in b] for x in a])
    out = set()
    for i in range(len(a)):
        row = sorted(range(len(b)), key=lambda j: (d[i, j], j))[:k]
        for j in row:
            col = sorted(range(len(a)), key=lambda r: (d[r, j], r))[:k]
            if i in col:
                out.add((i, j))
    return out


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3, 5]))
def test_mutual_topk_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(int(rng.integers(1, 25)), 4))
    b = rng.normal(size=(int(rng.integers(1, 25)), 4))
    got = mutual_topk(a, b, k)
    assert {tuple(p) for p in got.tolist()} == brute_mutual(a, b, k)
    assert len(got) == len({tuple(p) for p in got.tolist()})


def test_mutual_topk_examples():
    a = np.array([[0.0, 0], [10, 0]])
    b = np.array([[0.1, 0], [10.1, 0], [50, 0]])
    assert sorted(mutual_topk(a, b, 1).tolist()) == [[0, 0], [1, 1]]
    assert mutual_topk(np.zeros((0, 2)), b, 2).shape == (0, 2)
    with pytest.raises(ValueError):
        mutual_topk(a, b, 0)
    # k at least both sizes gives every pair
    assert len(mutual_topk(a, b, 3)) == 6


@given(st.integers(0, 2**31 - 1))
def test_mutual_topk_symmetry_and_monotone(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(15, 3))
    b = rng.normal(size=(12, 3))
    prev = set()
    for k in (1, 2, 3, 5):
        ab = {tuple(p) for p in mutual_topk(a, b, k).tolist()}
        ba = {(j, i) for i, j in mutual_topk(b, a, k).tolist()}
        assert ab == ba
        assert prev <= ab
        prev = ab


def test_mutual_topk_ordering():
    rng = np.random.default_rng(0)
    pairs, d = mutual_topk(rng.normal(size=(20, 3)), rng.normal(size=(20, 3)), 3, return_distances=True)
    assert np.all(np.diff(d) >= 0)
    assert np.allclose(similarity_from_distance(np.sqrt(2.0)), 0.0)


def test_feature_distances():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    ref = np.linalg.norm(a[:, None] - b[None], axis=-1)
    assert np.allclose(feature_distances(a, b), ref, atol=1e-12)


def test_sample_patch_pixels_quarter():
    pyr = build_pyramid(120, 160, (3, 4), 3)
    pix = sample_patch_pixels(pyr, 2, 1, 2)
    assert len(pix) == 25
    u, v = pix % 160, pix // 160
    assert np.all(u % 2 == 0) and np.all(v % 2 == 0)
    assert u.min() == 20 and v.min() == 10 and u.max() == 28 and v.max() == 18
    assert len(sample_patch_pixels(pyr, 0, 0, 0)) == 400


def test_coarse_match_pools_levels():
    pyr = build_pyramid(12, 16, (3, 4), 2)
    rng = np.random.default_rng(2)
    nodes = rng.normal(size=(5, 4))
    pool = rng.normal(size=(pyr.total_patches, 4))
    pool[3] = nodes[0]
    pool[12 + 20] = nodes[1]
    levels = [pool[:12], pool[12:]]
    cs = coarse_match(levels, nodes, pyr, k=1)
    got = {(int(p), int(n)) for p, n in zip(cs.pooled, cs.node)}
    assert (3, 0) in got and (32, 1) in got
    for (lv, r, c), node, score in cs.entries():
        assert pyr.pool_index(lv, r, c) in cs.pooled.tolist()
    with pytest.raises(ValueError):
        coarse_match([pool[:12]], nodes, pyr)
    assert len(coarse_match(levels, nodes, pyr, k=3, max_coarse=2)) == 2


def test_fine_match_inside_patch():
    pyr = build_pyramid(12, 16, (3, 4), 1)
    rng = np.random.default_rng(3)
    pix_feats = rng.normal(size=(192, 6))
    pts = rng.normal(size=(10, 6))
    members = np.array([2, 5, 7])
    lm = fine_match(((0, 1, 1), 4), pyr, pix_feats, pts, members, k_fine=1)
    allowed = set(sample_patch_pixels(pyr, 0, 1, 1).tolist())
    assert set(lm.pixel.tolist()) <= allowed
    assert set(lm.point.tolist()) <= set(members.tolist())
    assert np.all(lm.node == 4) and np.all(lm.patch == pyr.pool_index(0, 1, 1))
    assert len(fine_match(((0, 1, 1), 4), pyr, pix_feats, pts, [], 1)) == 0


def _local(pixel, point, score):
    n = len(pixel)
    return LocalMatches(np.array(pixel), np.array(point), np.array(score, float), np.zeros(n, int),
                        np.zeros(n, int))


def test_assemble_dedup_against_set_oracle():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(30, 3))
    sets = [_local(rng.integers(0, 40, 25), rng.integers(0, 30, 25), rng.integers(0, 5, 25) / 4)
            for _ in range(4)]
    best = {}
    for s in sets:
        for p, q, sc in zip(s.pixel, s.point, s.score):
            best[(p, q)] = max(best.get((p, q), -np.inf), sc)
    out = assemble(sets, 8, pts)
    assert {(int(p), int(q)): float(s) for p, q, s in zip(out.pixel, out.point, out.score)} == best
    assert len(out) == len(best)
    keys = list(zip(-out.score, out.pixel, out.point))
    assert keys == sorted(keys)
    assert np.array_equal(out.uv, np.stack([out.pixel % 8, out.pixel // 8], 1))
    assert np.array_equal(out.xyz, pts[out.point])
    again = assemble([_local(out.pixel, out.point, out.score)], 8, pts)
    assert np.array_equal(again.pixel, out.pixel) and np.array_equal(again.point, out.point)


def test_same_pair_from_two_levels_once():
    pts = np.zeros((3, 3))
    out = assemble([_local([5], [1], [0.9]), _local([5], [1], [0.7])], 4, pts)
    assert len(out) == 1 and out.score[0] == 0.9
    assert len(assemble([], 4, pts)) == 0


def test_jsonl_roundtrip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(5, 3))
    out = assemble([_local([1, 2, 3], [0, 4, 2], [0.5, 0.9, 0.1])], 4, pts)
    path = tmp_path / "c.jsonl"
    path.write_text(out.to_jsonl())
    uv, xyz, score = read_correspondences(path)
    assert np.array_equal(uv, out.uv) and np.array_equal(xyz, out.xyz) and np.array_equal(score, out.score)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"u", "v", "x", "y", "z", "score"}
