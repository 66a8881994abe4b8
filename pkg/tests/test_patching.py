import numpy as np
import pytest
from hypothesis import given, strategies as st

from xreg.errors import PartitionError
from xreg.patching import build_pyramid, nearest_index, partition_image, point_to_node


def test_partition_examples():
    g = partition_image(480, 640, 60, 80)
    assert (g.patch_h, g.patch_w) == (8, 8)
    g = partition_image(480, 640, 6, 8)
    assert (g.patch_h, g.patch_w) == (80, 80)
    g = partition_image(4, 4, 2, 2)
    assert g.num_patches == 4 and g.pixel_indices.shape == (4, 4)
    assert sorted(g.pixel_indices.ravel().tolist()) == list(range(16))
    # row-major patch order, patch (0,1) owns columns 2..3 of rows 0..1
    assert g.pixel_indices[1].tolist() == [2, 3, 6, 7]
    with pytest.raises(PartitionError):
        partition_image(10, 10, 3, 2)


def test_patch_of_pixel_consistent_with_pixel_lists():
    g = partition_image(12, 16, 3, 4)
    owner = g.patch_of_pixel()
    for p, pix in enumerate(g.pixel_indices):
        assert np.all(owner[pix] == p)
        r0, r1, c0, c1 = g.bounds(p)
        assert len(pix) == (r1 - r0) * (c1 - c0)


def test_pyramid_paper_levels():
    pyr = build_pyramid(480, 640)
    assert [lv.shape for lv in pyr.levels] == [(6, 8), (12, 16), (24, 32)]
    pyr = build_pyramid(120, 160, (3, 4), 3)
    assert [lv.shape for lv in pyr.levels] == [(3, 4), (6, 8), (12, 16)]
    one = build_pyramid(480, 640, (6, 8), 1)
    assert one.K == 1 and one.levels[0] == partition_image(480, 640, 6, 8)
    with pytest.raises(PartitionError):
        build_pyramid(120, 160, (3, 4), 5)


def test_pyramid_nesting_and_partition():
    pyr = build_pyramid(120, 160, (3, 4), 3)
    for lv in pyr.levels:
        assert sorted(lv.pixel_indices.ravel().tolist()) == list(range(120 * 160))
    for k in range(pyr.K - 1):
        parent, child = pyr.levels[k], pyr.levels[k + 1]
        for p in range(parent.num_patches):
            i, j = divmod(p, parent.grid_w)
            kids = [(2 * i + a) * child.grid_w + 2 * j + b for a in (0, 1) for b in (0, 1)]
            union = np.concatenate([child.pixel_indices[c] for c in kids])
            assert len(union) == len(set(union.tolist()))
            assert set(union.tolist()) == set(parent.pixel_indices[p].tolist())
            r0, r1, c0, c1 = parent.bounds(p)
            for c in kids:
                u, v = child.centers[c]
                assert c0 <= u < c1 and r0 <= v < r1


def test_pool_index_roundtrip():
    pyr = build_pyramid(120, 160, (3, 4), 3)
    assert pyr.total_patches == 12 + 48 + 192
    for pooled in range(pyr.total_patches):
        assert pyr.pool_index(*pyr.unpool(pooled)) == pooled


def test_point_to_node_examples(rng):
    pts = rng.normal(size=(50, 3))
    g = point_to_node(pts, pts)
    assert np.array_equal(g.assignment, np.arange(50))
    g = point_to_node(pts, pts[:1])
    assert np.all(g.assignment == 0) and len(g.members) == 1 and len(g.members[0]) == 50


@given(st.integers(0, 2**31 - 1))
def test_point_to_node_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(400, 3))
    nodes = rng.uniform(-1, 1, size=(int(rng.integers(2, 60)), 3))
    g = point_to_node(pts, nodes)
    # surviving nodes are a subset of the input, and every input node that owns a point survives
    d = ((pts[:, None] - nodes[None]) ** 2).sum(-1)
    owners = np.unique(np.argmin(d, axis=1))
    assert np.array_equal(g.nodes, nodes[owners])
    d = ((pts[:, None] - g.nodes[None]) ** 2).sum(-1)
    assert np.array_equal(g.assignment, np.argmin(d, axis=1))
    members = np.sort(np.concatenate(g.members))
    assert np.array_equal(members, np.arange(len(pts)))
    for n, m in enumerate(g.members):
        assert np.all(g.assignment[m] == n)


def test_nearest_ties_go_to_lowest_index():
    refs = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
    pts = np.zeros((3, 3))
    assert nearest_index(pts, refs).tolist() == [0, 0, 0]
    refs = refs[::-1].copy()
    assert nearest_index(pts, refs).tolist() == [0, 0, 0]
    # integer grid: many exact ties
    grid = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    q = grid[:-1] + 0.5
    d = ((q[:, None] - grid[None]) ** 2).sum(-1)
    assert np.array_equal(nearest_index(q, grid), np.argmin(d, axis=1))


def test_empty_nodes_dropped():
    pts = np.array([[0.0, 0, 0], [0.1, 0, 0]])
    nodes = np.array([[0.0, 0, 0], [5.0, 5, 5]])
    g = point_to_node(pts, nodes)
    assert g.num_nodes == 1 and np.all(g.assignment == 0)
    pts = np.array([[0.0, 0, 0], [0.01, 0, 0], [1.0, 0, 0]])
    g = point_to_node(pts, np.array([[0.0, 0, 0], [1.0, 0, 0]]), min_members=2)
    assert g.num_nodes == 1 and np.all(g.assignment == 0)
    with pytest.raises(PartitionError):
        point_to_node(pts, np.zeros((0, 3)))
