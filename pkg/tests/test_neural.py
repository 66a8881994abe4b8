import numpy as np
import pytest
from hypothesis import given, strategies as st

from xreg.config import Config
from xreg.errors import EmptyMemory, ShapeError, ZeroVector
from xreg.neural import tensor as T
from xreg.neural.checkpoint import load_checkpoint, read_container, save_checkpoint, write_container
from xreg.neural.extractor import FileProvider, ToyExtractor, im2col
from xreg.neural.layers import (AttentionBlock, Linear, Transformer, add_positional, attention,
                                attention_weights, bilinear_matrix, fourier_embed, pool2x2,
                                pyramid_features, refine_features)
from xreg.neural.model import MatchingNetwork

from gradcheck import check_params


def small_config():
    cfg = Config()
    cfg.camera.width, cfg.camera.height = 24, 16
    cfg.camera.fx = cfg.camera.fy = 20.0
    cfg.camera.cx, cfg.camera.cy = 11.5, 7.5
    cfg.patch.coarse_grid = [4, 6]
    cfg.patch.pyramid_base = [2, 3]
    cfg.patch.pyramid_levels = 2
    m = cfg.model
    m.d, m.heads, m.n_blocks, m.fourier_L = 8, 2, 1, 3
    m.fine_dim, m.hidden, m.point_fourier, m.window, m.node_knn = 4, 6, 2, 3, 3
    return cfg


# Fourier embedding ----------------------------------------------------------

def test_fourier_embed_terms():
    x = 0.7
    L = 4
    e = fourier_embed(x, L)
    want = [x]
    for i in range(L):
        want += [np.sin(2.0 ** i * x), np.cos(2.0 ** i * x)]
    assert e.shape == (2 * L + 1,)
    assert np.array_equal(e, np.array(want))
    assert np.array_equal(fourier_embed(0.0, 2), np.array([0.0, 0.0, 1.0, 0.0, 1.0]))


def test_fourier_embed_vectors():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(5, 3))
    e = fourier_embed(p, 3)
    assert e.shape == (5, 21)
    for c in range(3):
        assert np.array_equal(e[:, c * 7:(c + 1) * 7], np.stack([fourier_embed(v, 3) for v in p[:, c]]))


def test_add_positional_shape_errors():
    rng = np.random.default_rng(0)
    proj = Linear(2 * 7, 8, rng)
    feats = np.zeros((4, 8))
    out = add_positional(feats, rng.normal(size=(4, 2)), 3, proj)
    assert out.shape == (4, 8)
    with pytest.raises(ShapeError):
        add_positional(feats, rng.normal(size=(3, 2)), 3, proj)
    with pytest.raises(ShapeError):
        add_positional(feats, rng.normal(size=(4, 2)), 2, proj)


# attention ------------------------------------------------------------------

def dense_attention(a, m, blk):
    """Per-head loop evaluation of softmax(QK^T/sqrt(dh))V followed by the MLP."""
    h, dh = blk.heads, blk.d // blk.heads
    q, k, v = a @ blk.wq.data, m @ blk.wk.data, m @ blk.wv.data
    heads = []
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        out = np.zeros((len(a), dh))
        for r in range(len(a)):
            s = np.array([np.dot(q[r, sl], k[c, sl]) / np.sqrt(dh) for c in range(len(m))])
            w = np.exp(s - s.max())
            w /= w.sum()
            out[r] = sum(w[c] * v[c, sl] for c in range(len(m)))
        heads.append(out)
    o = np.concatenate(heads, axis=1)
    hid = np.maximum(o @ blk.w1.data + blk.b1.data, 0.0)
    return hid @ blk.w2.data + blk.b2.data


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 4]))
def test_attention_matches_dense_formula(seed, heads):
    rng = np.random.default_rng(seed)
    d = 8
    blk = AttentionBlock(d, heads, rng)
    a = rng.normal(size=(int(rng.integers(1, 7)), d))
    m = rng.normal(size=(int(rng.integers(1, 9)), d))
    got = attention(a, m, blk).data
    assert np.max(np.abs(got - dense_attention(a, m, blk))) < 1e-12


def test_softmax_rows_and_convex_hull():
    rng = np.random.default_rng(3)
    d = 6
    blk = AttentionBlock(d, 2, rng, hidden=2 * d)
    eye = np.eye(d)
    blk.w1.data = np.concatenate([eye, -eye], axis=1)
    blk.w2.data = np.concatenate([eye, -eye], axis=0)
    a, m = rng.normal(size=(5, d)), rng.normal(size=(7, d)) * 3
    s = attention_weights(a, m, blk).data
    assert np.all(np.abs(s.sum(-1) - 1.0) < 1e-9)
    out = attention(a, m, blk).data
    v = m @ blk.wv.data
    assert np.all(out >= v.min(0) - 1e-12) and np.all(out <= v.max(0) + 1e-12)


def test_attention_errors():
    rng = np.random.default_rng(0)
    blk = AttentionBlock(4, 2, rng)
    with pytest.raises(EmptyMemory):
        attention(np.zeros((2, 4)), np.zeros((0, 4)), blk)
    with pytest.raises(ShapeError):
        attention(np.zeros((2, 3)), np.zeros((2, 4)), blk)
    with pytest.raises(ShapeError):
        AttentionBlock(6, 4, rng)


def test_transformer_round_order():
    rng = np.random.default_rng(5)
    tr = Transformer(4, 2, 1, rng)
    x2, x3 = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    b = tr.blocks[0]
    s2 = x2 + attention(x2, x2, b["self2d"]).data
    s3 = x3 + attention(x3, x3, b["self3d"]).data
    want2 = s2 + attention(s2, s3, b["cross2d"]).data
    want3 = s3 + attention(s3, s2, b["cross3d"]).data
    got2, got3 = refine_features(x2, x3, tr)
    assert np.max(np.abs(got2.data - want2)) < 1e-12
    assert np.max(np.abs(got3.data - want3)) < 1e-12
    tr = Transformer(4, 2, 1, rng, use_self=False, use_cross=False)
    g2, g3 = tr(x2, x3)
    assert np.array_equal(g2.data, x2) and np.array_equal(g3.data, x3)


# normalization, resizing and pyramid -----------------------------------------

def test_l2_normalize_examples():
    assert np.array_equal(T.l2_normalize(np.array([[3.0, 4.0]])).data, [[0.6, 0.8]])
    u = np.array([[1.0, 0.0, 0.0]])
    assert np.array_equal(T.l2_normalize(u).data, u)
    rng = np.random.default_rng(1)
    n = np.linalg.norm(T.l2_normalize(rng.normal(size=(50, 7)) * 100).data, axis=1)
    assert np.all(np.abs(n - 1) < 1e-12)
    with pytest.raises(ZeroVector):
        T.l2_normalize(np.zeros((2, 3)))


def test_pool_and_pyramid_levels():
    x = np.arange(4 * 6 * 2, dtype=float).reshape(24, 2)
    p = pool2x2(x, (4, 6)).data
    grid = x.reshape(4, 6, 2)
    assert np.array_equal(p[0], grid[:2, :2].mean((0, 1)))
    assert p.shape == (6, 2)
    levels = pyramid_features(x, (4, 6), 2)
    assert [lv.shape for lv in levels] == [(6, 2), (24, 2)]
    assert np.array_equal(levels[1].data, x)
    with pytest.raises(ShapeError):
        pool2x2(np.zeros((15, 2)), (3, 5))


def test_bilinear_rows_sum_to_one():
    m = bilinear_matrix((3, 4), (6, 8))
    assert m.shape == (48, 12)
    assert np.allclose(m.sum(1), 1.0, atol=1e-12)
    assert np.array_equal(bilinear_matrix((2, 2), (2, 2)), np.eye(4))


def test_im2col_window():
    img = np.arange(20.0).reshape(4, 5)
    cols = im2col(img, 3)
    assert cols.shape == (20, 9)
    # interior pixel (1, 1): its 3x3 neighbourhood in row-major order
    assert np.array_equal(cols[6], img[0:3, 0:3].ravel())


# gradients ------------------------------------------------------------------

def test_tensor_op_gradients():
    rng = np.random.default_rng(11)
    a = T.parameter(rng.normal(size=(4, 5)))
    b = T.parameter(rng.normal(size=(5, 3)))
    c = T.parameter(rng.normal(size=(3,)))
    seg = np.array([0, 2, 2, 1])

    def f():
        x = T.linear(a, b, c)
        x = T.softmax(T.mul(x, 1.3), axis=-1)
        y = T.l2_normalize(T.add(T.gather(a, np.array([0, 0, 3])), 0.1))
        z = T.segment_mean(T.exp(T.mul(a, 0.3)), seg, 3)
        d = T.pairwise_distance(T.l2_normalize(a), T.l2_normalize(T.reshape(b, (3, 5))))
        w = T.concat([x, T.reshape(z, (3, 5))[:, :3]], axis=0)
        return T.add(T.add(T.tsum(T.square(w)), T.mean(y)), T.tsum(T.mul(d, d)))

    assert check_params(f, [a, b, c], rng, probes=60) < 1e-4


@given(st.integers(0, 2**31 - 1))
def test_attention_stack_gradients(seed):
    rng = np.random.default_rng(seed)
    tr = Transformer(6, 2, 2, rng)
    x2 = T.parameter(rng.normal(size=(4, 6)))
    x3 = T.parameter(rng.normal(size=(3, 6)))
    probe = rng.normal(size=(7, 6))

    def f():
        h2, h3 = tr(x2, x3)
        return T.tsum(T.mul(T.concat([h2, h3], axis=0), probe))

    params = list(tr.parameters().values()) + [x2, x3]
    assert check_params(f, params, rng, probes=4) < 1e-4


def test_extractor_gradients():
    rng = np.random.default_rng(2)
    ex = ToyExtractor((16, 24), (4, 6), 8, 4, rng, hidden=6, point_fourier=2, window=3, node_knn=3)
    image = rng.random((16, 24))
    pts = rng.normal(size=(30, 3))
    nodes = pts[:6]
    assign = np.argmin(((pts[:, None] - nodes[None]) ** 2).sum(-1), axis=1)
    probes = [rng.normal(size=s) for s in ((24, 8), (384, 4), (6, 8), (30, 4))]

    def f():
        out = ex.extract(image, pts, nodes, assign)
        parts = [T.tsum(T.mul(x, p)) for x, p in zip((out.f2d_coarse, out.f2d_fine, out.f3d_coarse,
                                                     out.f3d_fine), probes)]
        return sum(parts[1:], parts[0])

    params = list(ex.parameters().values())
    n = sum(p.data.size for p in params)
    assert check_params(f, params, rng, probes=max(20, n // 100)) < 1e-4


def test_full_model_gradient():
    cfg = small_config()
    rng = np.random.default_rng(4)
    net = MatchingNetwork(cfg, 0)
    image = rng.random((16, 24))
    pts = rng.normal(size=(25, 3))
    nodes = pts[:5]
    assign = np.argmin(((pts[:, None] - nodes[None]) ** 2).sum(-1), axis=1)

    def f():
        out = net(image, pts, nodes, assign)
        s = T.tsum(T.mul(out.levels[0], rng_probe[0]))
        return T.add(s, T.tsum(T.mul(out.nodes, rng_probe[1])))

    rng_probe = [rng.normal(size=(6, 8)), rng.normal(size=(5, 8))]
    assert check_params(f, list(net.parameters().values()), rng, probes=20) < 1e-4


# model plumbing -------------------------------------------------------------

def test_model_shapes_and_determinism():
    cfg = small_config()
    rng = np.random.default_rng(9)
    image = rng.random((16, 24))
    pts = rng.normal(size=(40, 3))
    nodes = pts[:7]
    assign = np.argmin(((pts[:, None] - nodes[None]) ** 2).sum(-1), axis=1)
    a = MatchingNetwork(cfg, 3)(image, pts, nodes, assign).numpy()
    b = MatchingNetwork(cfg, 3)(image, pts, nodes, assign).numpy()
    assert [x.shape for x in a.levels] == [(6, 8), (24, 8)]
    assert a.nodes.shape == (7, 8) and a.pixels.shape == (384, 4) and a.points.shape == (40, 4)
    for x, y in zip(a.levels + [a.nodes, a.pixels, a.points], b.levels + [b.nodes, b.pixels, b.points]):
        assert np.array_equal(x, y)
        n = np.linalg.norm(x, axis=1)
        # rows are unit length, or exactly zero where a tiny ReLU head died
        assert np.all((np.abs(n - 1) < 1e-12) | (n == 0))
    assert np.all(np.linalg.norm(a.nodes, axis=1) > 0.5)
    c = MatchingNetwork(cfg, 4)(image, pts, nodes, assign).numpy()
    assert not np.array_equal(a.nodes, c.nodes)
    with pytest.raises(ShapeError):
        MatchingNetwork(cfg, 3)(rng.random((8, 8)), pts, nodes, assign)


def test_checkpoint_roundtrip(tmp_path):
    cfg = small_config()
    net = MatchingNetwork(cfg, 1)
    path = tmp_path / "m.ck"
    save_checkpoint(path, net, 1, cfg.to_dict())
    header, state = load_checkpoint(path)
    assert header["seed"] == 1 and header["config"]["model"]["d"] == 8
    other = MatchingNetwork(cfg, 2)
    other.load_state_dict(state)
    for n, p in other.parameters().items():
        assert np.array_equal(p.data, net.parameters()[n].data.astype(np.float32).astype(np.float64))
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(Exception):
        read_container(tmp_path / "bad")
    (tmp_path / "trail").write_bytes(raw + b"\0")
    with pytest.raises(Exception):
        read_container(tmp_path / "trail")
    with pytest.raises(KeyError):
        other.load_state_dict({})


def test_file_provider(tmp_path):
    rng = np.random.default_rng(0)
    t = {"f2d_coarse": rng.normal(size=(24, 8)), "f2d_fine": rng.normal(size=(384, 4)),
         "f3d_coarse": rng.normal(size=(5, 8)), "f3d_fine": rng.normal(size=(30, 4))}
    write_container(tmp_path / "f.bin", t)
    fp = FileProvider.load(tmp_path / "f.bin")
    out = fp.extract(np.zeros((16, 24)), np.zeros((30, 3)), np.zeros((5, 3)), np.zeros(30, int))
    assert np.allclose(out.f3d_fine.data, t["f3d_fine"], atol=1e-6)
    with pytest.raises(ShapeError):
        fp.extract(np.zeros((16, 24)), np.zeros((29, 3)), np.zeros((5, 3)), np.zeros(29, int))
    with pytest.raises(KeyError):
        FileProvider({"f2d_coarse": t["f2d_coarse"]})
