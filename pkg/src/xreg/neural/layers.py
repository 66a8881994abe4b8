"""Network building blocks: Fourier embedding, attention, pyramid head."""

from __future__ import annotations

import numpy as np

from ..errors import EmptyMemory, ShapeError
from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container; children and params keep insertion order."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.children: dict[str, Module] = {}

    def add_param(self, name: str, value) -> Tensor:
        t = T.parameter(value, name=name)
        self.params[name] = t
        return t

    def add_child(self, name: str, mod: "Module") -> "Module":
        self.children[name] = mod
        return mod

    def named_parameters(self, prefix: str = ""):
        for n, p in self.params.items():
            yield prefix + n, p
        for cn, c in self.children.items():
            yield from c.named_parameters(prefix + cn + ".")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for n, p in params.items():
            v = np.asarray(state[n], dtype=np.float64)
            if v.shape != p.data.shape:
                raise ShapeError(f"{n}: expected {p.data.shape}, got {v.shape}")
            p.data = v.copy()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain * np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 gain: float = 1.0):
        super().__init__()
        self.w = self.add_param("w", glorot(rng, n_in, n_out, gain))
        self.b = self.add_param("b", np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.w, self.b)


# Fourier positional embedding ------------------------------------------------

def fourier_embed(x, L: int) -> np.ndarray:
    """``[x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)]`` per scalar.

    For array input the last axis holds the vector components; each one is
    embedded separately and the results are concatenated, giving
    ``D * (2L + 1)`` values per vector.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    terms = [x[..., None]]
    for i in range(L):
        f = x[..., None] * (2.0 ** i)
        terms += [np.sin(f), np.cos(f)]
    out = np.concatenate(terms, axis=-1)
    if scalar:
        return out[0]
    return out.reshape(*x.shape[:-1], x.shape[-1] * (2 * L + 1))


def add_positional(features, coords, L: int, proj: Linear) -> Tensor:
    """``features + proj(fourier_embed(coords))``."""
    features = T.as_tensor(features)
    emb = fourier_embed(coords, L)
    if emb.shape[0] != features.shape[0]:
        raise ShapeError(f"{emb.shape[0]} coordinates for {features.shape[0]} features")
    if proj.w.shape[0] != emb.shape[1] or proj.w.shape[1] != features.shape[1]:
        raise ShapeError("positional projection does not match feature width")
    return T.add(features, proj(emb))


def normalized_pixel_coords(uv: np.ndarray, width: int, height: int) -> np.ndarray:
    """Pixel coordinates mapped to [-1, 1] per axis."""
    uv = np.asarray(uv, dtype=np.float64)
    return np.stack([2.0 * uv[:, 0] / max(width - 1, 1) - 1.0,
                     2.0 * uv[:, 1] / max(height - 1, 1) - 1.0], axis=1)


# attention -------------------------------------------------------------------

class AttentionBlock(Module):
    """Multi-head attention with a two-layer ReLU output MLP.

    The MLP hidden width defaults to ``d``; an identity MLP can be built with
    hidden width ``2d`` and weights ``[I, -I]`` / ``[I; -I]``.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, hidden: int | None = None,
                 out_gain: float = 1.0):
        super().__init__()
        if d % heads:
            raise ShapeError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        hidden = hidden or d
        self.wq = self.add_param("wq", glorot(rng, d, d))
        self.wk = self.add_param("wk", glorot(rng, d, d))
        self.wv = self.add_param("wv", glorot(rng, d, d))
        self.w1 = self.add_param("w1", glorot(rng, d, hidden, np.sqrt(2.0)))
        self.b1 = self.add_param("b1", np.zeros(hidden))
        self.w2 = self.add_param("w2", glorot(rng, hidden, d, out_gain))
        self.b2 = self.add_param("b2", np.zeros(d))


def attention_weights(anchor, memory, block: AttentionBlock) -> Tensor:
    """Per-head softmax maps, shape (heads, |A|, |M|)."""
    a, m = T.as_tensor(anchor), T.as_tensor(memory)
    h, dh = block.heads, block.d // block.heads
    q = T.transpose(T.reshape(T.matmul(a, block.wq), (a.shape[0], h, dh)), (1, 0, 2))
    k = T.transpose(T.reshape(T.matmul(m, block.wk), (m.shape[0], h, dh)), (1, 2, 0))
    return T.softmax(T.mul(T.matmul(q, k), 1.0 / np.sqrt(dh)), axis=-1)


def attention(anchor, memory, block: AttentionBlock) -> Tensor:
    """Softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, then the MLP."""
    a, m = T.as_tensor(anchor), T.as_tensor(memory)
    if m.shape[0] == 0:
        raise EmptyMemory("attention memory is empty")
    if a.shape[-1] != block.d or m.shape[-1] != block.d:
        raise ShapeError(f"feature width must be {block.d}")
    h, dh = block.heads, block.d // block.heads
    s = attention_weights(a, m, block)
    v = T.transpose(T.reshape(T.matmul(m, block.wv), (m.shape[0], h, dh)), (1, 0, 2))
    o = T.reshape(T.transpose(T.matmul(s, v), (1, 0, 2)), (a.shape[0], block.d))
    hid = T.relu(T.linear(o, block.w1, block.b1))
    return T.linear(hid, block.w2, block.b2)


class Transformer(Module):
    """Interleaved self/cross attention rounds with residual connections."""

    KINDS = ("self2d", "self3d", "cross2d", "cross3d")

    def __init__(self, d: int, heads: int, n_blocks: int, rng: np.random.Generator,
                 use_self: bool = True, use_cross: bool = True):
        super().__init__()
        self.n_blocks = n_blocks
        self.use_self, self.use_cross = use_self, use_cross
        self.blocks = []
        for r in range(n_blocks):
            rnd = {}
            for kind in self.KINDS:
                rnd[kind] = self.add_child(f"{r}.{kind}", AttentionBlock(d, heads, rng, out_gain=0.5))
            self.blocks.append(rnd)

    def __call__(self, f2d, f3d):
        return refine_features(f2d, f3d, self)


def refine_features(f2d, f3d, stack: Transformer):
    """Run every round: self-2D, self-3D, then simultaneous cross 2D<-3D and 3D<-2D."""
    x2, x3 = T.as_tensor(f2d), T.as_tensor(f3d)
    for rnd in stack.blocks:
        if stack.use_self:
            x2 = T.add(x2, attention(x2, x2, rnd["self2d"]))
            x3 = T.add(x3, attention(x3, x3, rnd["self3d"]))
        if stack.use_cross:
            c2 = T.add(x2, attention(x2, x3, rnd["cross2d"]))
            c3 = T.add(x3, attention(x3, x2, rnd["cross3d"]))
            x2, x3 = c2, c3
    return x2, x3


# resizing and pyramid --------------------------------------------------------

def bilinear_matrix(src: tuple[int, int], dst: tuple[int, int]) -> np.ndarray:
    """Dense (dst_h*dst_w, src_h*src_w) bilinear interpolation matrix (half-pixel centers)."""
    def axis(n_src, n_dst):
        m = np.zeros((n_dst, n_src))
        scale = n_src / n_dst
        for i in range(n_dst):
            x = (i + 0.5) * scale - 0.5
            x = min(max(x, 0.0), n_src - 1)
            x0 = int(np.floor(x))
            x1 = min(x0 + 1, n_src - 1)
            f = x - x0
            m[i, x0] += 1 - f
            m[i, x1] += f
        return m
    return np.kron(axis(src[0], dst[0]), axis(src[1], dst[1]))


def resize_grid(x, src: tuple[int, int], dst: tuple[int, int]) -> Tensor:
    """Bilinear resize of flattened row-major grid features (src_h*src_w, C)."""
    if tuple(src) == tuple(dst):
        return T.as_tensor(x)
    return T.matmul(bilinear_matrix(src, dst), x)


def pool2x2(x, grid: tuple[int, int]) -> Tensor:
    """Mean over non-overlapping 2x2 cells of a flattened (gh*gw, C) grid."""
    x = T.as_tensor(x)
    gh, gw = grid
    if gh % 2 or gw % 2:
        raise ShapeError(f"grid {grid} cannot be pooled by 2")
    c = x.shape[-1]
    y = T.reshape(x, (gh // 2, 2, gw // 2, 2, c))
    y = T.mean(y, axis=(1, 3))
    return T.reshape(y, (gh // 2 * (gw // 2), c))


class PyramidHead(Module):
    """Lightweight K-stage head: each stage pools 2x2 then applies a learnable linear map."""

    def __init__(self, d: int, K: int, rng: np.random.Generator):
        super().__init__()
        self.K = K
        self.maps = [self.add_child(f"stage{k}", Linear(d, d, rng)) for k in range(K)]
        for m in self.maps:
            m.w.data = np.eye(d) + 0.1 * m.w.data


def pyramid_features(h2d, finest: tuple[int, int], K: int, head: PyramidHead | None = None,
                     aggregate: str = "mean"):
    """Features for every pyramid level, ordered coarsest first like :class:`PatchPyramid`.

    ``h2d`` is the flattened finest grid. ``head=None`` uses identity maps.
    """
    x = T.as_tensor(h2d)
    gh, gw = finest
    if x.shape[0] != gh * gw:
        raise ShapeError(f"expected {gh * gw} rows for grid {finest}, got {x.shape[0]}")
    if aggregate != "mean":
        raise ValueError(f"unsupported aggregation {aggregate!r}")
    out = []
    grid = (gh, gw)
    for k in range(K):
        if k > 0:
            x = pool2x2(x, grid)
            grid = (grid[0] // 2, grid[1] // 2)
        y = x if head is None else head.maps[k](x)
        out.append(y)
        x = y
    return out[::-1]


def l2_normalize(features) -> Tensor:
    return T.l2_normalize(features, axis=-1)
