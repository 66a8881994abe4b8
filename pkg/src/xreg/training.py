"""Training loop for the matching network: Adam, per-epoch decay, JSON-lines log."""

from __future__ import annotations

import json
import time

import numpy as np

from .config import Config
from .dataset import PreparedPair, prepare_pair, thresholds_from_config
from .errors import EmptyDataset, TrainingDiverged
from .groundtruth import label_pixel_point_matrix, overlap_pairs
from .loss import CircleLossConfig, coarse_loss, fine_loss, total_loss
from .neural import tensor as T
from .neural.model import MatchingNetwork


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def loss_config(cfg: Config) -> CircleLossConfig:
    return CircleLossConfig(cfg.loss.gamma, cfg.loss.delta_p, cfg.loss.delta_n, cfg.loss.lambda_fine)


def sample_fine_pairs(prep: PreparedPair, cfg: Config, rng: np.random.Generator):
    """Up to ``loss.fine_samples`` ground-truth pixel-point matches and the full label matrix
    between their pixels and points. Returns ``(pixels, points, labels)`` or None."""
    pair = prep.pair
    th = thresholds_from_config(cfg)
    if prep.fine_pairs is None:
        prep.fine_pairs = overlap_pairs(pair.points, pair.t_gt, pair.depth, pair.intrinsics,
                                        th.fine_pos3d, th.fine_pos2d)
    pi, qi = prep.fine_pairs
    if len(pi) == 0:
        return None
    n = min(cfg.loss.fine_samples, len(pi))
    pick = np.sort(rng.choice(len(pi), size=n, replace=False))
    pix = np.unique(pi[pick])
    pts = np.unique(qi[pick])
    w = pair.depth.shape[1]
    uv = np.stack([pix % w, pix // w], axis=1).astype(np.float64)
    z = pair.depth.values.ravel()[pix]
    labels = label_pixel_point_matrix(uv, z, pair.points[pts], pair.t_gt, pair.intrinsics, th)
    return pix, pts, labels


def pair_loss(model: MatchingNetwork, prep: PreparedPair, cfg: Config, rng: np.random.Generator):
    pair = prep.pair
    feats = model(pair.image, pair.points, prep.nodes, prep.graph.assignment)
    lc = loss_config(cfg)
    coarse = coarse_loss(feats.levels, feats.nodes, prep.o2d, prep.o3d, lc, thresholds_from_config(cfg))
    fine = T.Tensor(0.0)
    sample = sample_fine_pairs(prep, cfg, rng)
    if sample is not None:
        pix, pts, labels = sample
        fine = fine_loss(T.gather(feats.pixels, pix), T.gather(feats.points, pts), labels, lc)
    return coarse, fine, total_loss(coarse, fine, lc)


def train(pairs, cfg: Config, seed: int | None = None, epochs: int | None = None, lr: float | None = None,
          log=None, steps: int | None = None, preps=None, max_seconds: float | None = None) -> MatchingNetwork:
    """Train a fresh network on ``pairs``; one step per pair, pairs shuffled every epoch.

    ``log`` receives one dict per step. ``steps`` caps the total number of
    steps and ``max_seconds`` the wall time (checked after every step; a
    time cap makes the result depend on machine speed). Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("no training pairs")
    seed = cfg.train.seed if seed is None else seed
    epochs = cfg.train.epochs if epochs is None else epochs
    lr0 = cfg.train.lr if lr is None else lr
    model = MatchingNetwork(cfg, seed)
    if epochs <= 0 or steps == 0:
        return model
    if preps is None:
        preps = [prepare_pair(p, cfg) for p in pairs]
    opt = Adam(model.parameters(), lr0)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    step = 0
    for epoch in range(epochs):
        opt.lr = lr0 * (1.0 - cfg.train.lr_decay) ** epoch
        for idx in rng.permutation(len(preps)):
            model.zero_grad()
            coarse, fine, total = pair_loss(model, preps[idx], cfg, rng)
            vals = [float(np.asarray(x.data)) for x in (coarse, fine, total)]
            if not all(np.isfinite(vals)):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            if total.requires_grad:
                total.backward()
                opt.step()
            if log is not None:
                log({"step": step, "coarse": vals[0], "fine": vals[1], "total": vals[2]})
            step += 1
            if steps is not None and step >= steps:
                return model
            if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
                return model
    return model


class JsonlLog:
    def __init__(self, path, echo=None):
        self.f = open(path, "w")
        self.echo = echo
        self.t0 = time.perf_counter()

    def __call__(self, rec):
        self.f.write(json.dumps(rec, sort_keys=True) + "\n")
        self.f.flush()
        if self.echo is not None:
            self.echo(rec, time.perf_counter() - self.t0)

    def close(self):
        self.f.close()
