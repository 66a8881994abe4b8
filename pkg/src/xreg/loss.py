"""Circle loss (standard and overlap-scaled) and the combined training objective.

The per-pair weights are clamped at zero and held constant when
differentiating, following the usual circle-loss convention; gradients are
therefore those of the loss with the weights frozen at their current values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groundtruth import Label, OverlapThresholds, label_matrix
from .neural import tensor as T
from .neural.tensor import Tensor


@dataclass(frozen=True)
class CircleLossConfig:
    gamma: float = 24.0
    delta_p: float = 0.1
    delta_n: float = 1.4
    lambda_fine: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not self.delta_p < self.delta_n:
            raise ValueError("delta_p must be below delta_n")


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _logsumexp(x, mask, axis=-1):
    x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(x - m).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.log(s) + m
    soft = np.where(mask, np.exp(x - m) / np.where(s > 0, s, 1.0), 0.0)
    return np.squeeze(lse, axis), soft


def circle_weights(d_pos, d_neg, scale_pos, scale_neg, cfg: CircleLossConfig):
    """Clamped weights (beta_p, beta_n)."""
    bp = np.maximum(0.0, cfg.gamma * np.asarray(scale_pos) * (np.asarray(d_pos) - cfg.delta_p))
    bn = np.maximum(0.0, cfg.gamma * np.asarray(scale_neg) * (cfg.delta_n - np.asarray(d_neg)))
    return bp, bn


def circle_loss_fixed(d_pos, d_neg, beta_pos, beta_neg, cfg: CircleLossConfig):
    """Loss value and distance gradients for given (frozen) weights."""
    d_pos = np.asarray(d_pos, dtype=np.float64)
    d_neg = np.asarray(d_neg, dtype=np.float64)
    if d_pos.size == 0 or d_neg.size == 0:
        return 0.0, np.zeros_like(d_pos), np.zeros_like(d_neg)
    ep = beta_pos * (d_pos - cfg.delta_p)
    en = beta_neg * (cfg.delta_n - d_neg)
    lp, sp = _logsumexp(ep, np.ones(ep.shape, bool))
    ln, sn = _logsumexp(en, np.ones(en.shape, bool))
    z = lp + ln
    value = float(np.logaddexp(0.0, z) / cfg.gamma)
    coef = _sigmoid(z) / cfg.gamma
    return value, coef * sp * beta_pos, -coef * sn * beta_neg


def circle_loss(d_pos, d_neg, scale_pos=None, scale_neg=None, cfg: CircleLossConfig = CircleLossConfig()):
    """Circle loss of one anchor from its positive and negative feature distances.

    Returns ``(value, grad_pos, grad_neg)``.
    """
    d_pos = np.asarray(d_pos, dtype=np.float64).ravel()
    d_neg = np.asarray(d_neg, dtype=np.float64).ravel()
    sp = np.ones_like(d_pos) if scale_pos is None else np.asarray(scale_pos, dtype=np.float64).ravel()
    sn = np.ones_like(d_neg) if scale_neg is None else np.asarray(scale_neg, dtype=np.float64).ravel()
    bp, bn = circle_weights(d_pos, d_neg, sp, sn, cfg)
    return circle_loss_fixed(d_pos, d_neg, bp, bn, cfg)


def circle_loss_rows(dist: Tensor, pos: np.ndarray, neg: np.ndarray, scale_pos: np.ndarray,
                     scale_neg: np.ndarray, cfg: CircleLossConfig):
    """Row-wise circle loss over a distance matrix as a differentiable op.

    Returns ``(losses, valid)`` where ``losses`` is a (rows,) tensor and
    ``valid`` marks rows with at least one positive and one negative.
    """
    d = dist.data
    bp = np.where(pos, np.maximum(0.0, cfg.gamma * scale_pos * (d - cfg.delta_p)), 0.0)
    bn = np.where(neg, np.maximum(0.0, cfg.gamma * scale_neg * (cfg.delta_n - d)), 0.0)
    lp, sp = _logsumexp(bp * (d - cfg.delta_p), pos)
    ln, sn = _logsumexp(bn * (cfg.delta_n - d), neg)
    valid = pos.any(1) & neg.any(1)
    z = np.where(valid, lp + ln, 0.0)
    value = np.where(valid, np.logaddexp(0.0, z) / cfg.gamma, 0.0)
    coef = np.where(valid, _sigmoid(z) / cfg.gamma, 0.0)

    def bw(g):
        return ((g * coef)[:, None] * (sp * bp - sn * bn),)
    return Tensor._make(value, (dist,), bw), valid


def _masked_mean(losses: Tensor, valid: np.ndarray):
    idx = np.flatnonzero(valid)
    if len(idx) == 0:
        return None
    return T.mean(T.gather(losses, idx))


def coarse_loss(level_feats, node_feats, o2d: np.ndarray, o3d: np.ndarray,
                cfg: CircleLossConfig = CircleLossConfig(),
                th: OverlapThresholds = OverlapThresholds()) -> Tensor:
    """Overlap-scaled circle loss between pooled pyramid patches and nodes.

    Every patch and every node serves as an anchor; positives use the final
    (min) overlap as their scale, negatives use 1, ignored pairs are skipped.
    The two anchor directions are averaged.
    """
    pool = T.concat(list(level_feats), axis=0) if isinstance(level_feats, (list, tuple)) else T.as_tensor(level_feats)
    nodes = T.as_tensor(node_feats)
    labels = label_matrix(o2d, o3d, th)
    pos = labels == Label.POSITIVE
    neg = labels == Label.NEGATIVE
    if not pos.any() or not neg.any():
        return Tensor(0.0)
    lam = np.minimum(o2d, o3d)
    dist = T.pairwise_distance(pool, nodes)
    parts = []
    rows, vr = circle_loss_rows(dist, pos, neg, lam, np.ones_like(lam), cfg)
    cols, vc = circle_loss_rows(T.transpose(dist), pos.T, neg.T, lam.T, np.ones_like(lam.T), cfg)
    for losses, valid in ((rows, vr), (cols, vc)):
        m = _masked_mean(losses, valid)
        if m is not None:
            parts.append(m)
    if not parts:
        return Tensor(0.0)
    return T.mul(sum(parts[1:], parts[0]), 1.0 / len(parts))


def fine_loss(pixel_feats, point_feats, labels: np.ndarray,
              cfg: CircleLossConfig = CircleLossConfig()) -> Tensor:
    """Standard circle loss (all scales 1) over a pixel-by-point label matrix."""
    labels = np.asarray(labels)
    pos = labels == Label.POSITIVE
    neg = labels == Label.NEGATIVE
    if not pos.any() or not neg.any():
        return Tensor(0.0)
    dist = T.pairwise_distance(T.as_tensor(pixel_feats), T.as_tensor(point_feats))
    ones = np.ones(labels.shape)
    parts = []
    rows, vr = circle_loss_rows(dist, pos, neg, ones, ones, cfg)
    cols, vc = circle_loss_rows(T.transpose(dist), pos.T, neg.T, ones.T, ones.T, cfg)
    for losses, valid in ((rows, vr), (cols, vc)):
        m = _masked_mean(losses, valid)
        if m is not None:
            parts.append(m)
    if not parts:
        return Tensor(0.0)
    return T.mul(sum(parts[1:], parts[0]), 1.0 / len(parts))


def total_loss(coarse, fine, cfg: CircleLossConfig = CircleLossConfig()):
    """``coarse + lambda * fine``; works on floats and tensors alike."""
    if isinstance(coarse, Tensor) or isinstance(fine, Tensor):
        return T.add(coarse, T.mul(T.as_tensor(fine), cfg.lambda_fine))
    return coarse + cfg.lambda_fine * fine
