"""Matching features built from the ground-truth registration.

They exercise the matching, registration and metric code without any
training. Patch and node features are arranged so that a mutual top-k
pair can only form between a patch and a node whose final overlap exceeds
the threshold. Pixel and point features embed the camera-frame 3D
location (lifted pixel, or point under the ground-truth pose), so fine
matching pairs each point with the pixels nearest to it in space.
"""

from __future__ import annotations

import numpy as np

from .dataset import PreparedPair
from .geometry import depth_to_points
from .neural.model import MatchFeatures


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def coarse_oracle(overlap: np.ndarray, k: int, tau: float = 0.30, eps: float = 1e-2):
    """Patch and node features from a (patches, nodes) final-overlap matrix.

    Related pairs (overlap > ``tau``) get positive similarity proportional to
    the overlap; every other pair gets similarity 0 or ``eps**2``. The small
    term pulls elements with fewer than ``k`` related partners toward
    elements that have at least ``k`` (and therefore never reciprocate), so
    unrelated pairs cannot become mutual while enough such elements exist.
    """
    rel = np.where(overlap > tau, overlap, 0.0)
    n_p, n_n = rel.shape
    hub_p = (rel > 0).sum(1) >= k
    hub_n = (rel > 0).sum(0) >= k
    pf = np.zeros((n_p, n_n + 3))
    nf = np.zeros((n_n, n_n + 3))
    pf[:, :n_n] = rel
    nf[:, :n_n] = np.eye(n_n)
    pf[:, n_n] = eps * ~hub_p
    nf[:, n_n] = eps * hub_n
    pf[:, n_n + 1] = eps * hub_p
    nf[:, n_n + 1] = eps * ~hub_n
    # rows that are still zero get a private direction
    pf[:, n_n + 2] = np.where(~pf.any(1), 1.0, 0.0)
    nf[:, n_n + 2] = np.where(~nf.any(1), -1.0, 0.0)
    return _unit(pf), _unit(nf)


def _periodic(x: np.ndarray, L: int, scale: float) -> np.ndarray:
    """Sine/cosine pairs at ``scale * 2^i``, i < L; constant norm, so after
    normalization nearest neighbours follow coordinate distance locally."""
    terms = []
    for i in range(L):
        f = x * (scale * 2.0 ** i)
        terms += [np.sin(f), np.cos(f)]
    return np.concatenate(terms, axis=1) / np.sqrt(x.shape[1] * L)


def fine_oracle(prep: PreparedPair, L: int = 2, scale: float = 0.5):
    """Pixel and point features from camera-frame 3D locations.

    A pixel's location is its back-projected depth, a point's location is
    the point under the ground-truth transform. Valid features share a
    constant component that keeps their mutual similarity positive; pixels
    without depth and points behind the camera sit on opposite ends of a
    separate axis.
    """
    pair = prep.pair
    k = pair.intrinsics
    h, w = pair.depth.shape
    flat, xyz = depth_to_points(pair.depth, k)
    pix = np.zeros((h * w, 6 * L + 2))
    pix[:, -1] = 1.0
    pix[flat, :-2] = 0.6 * _periodic(xyz, L, scale)
    pix[flat, -2:] = (0.8, 0.0)
    cam = pair.t_gt.apply(prep.points)
    front = cam[:, 2] > 0
    pts = np.zeros((len(cam), 6 * L + 2))
    pts[:, -1] = -1.0
    pts[front, :-2] = 0.6 * _periodic(cam[front], L, scale)
    pts[front, -2:] = (0.8, 0.0)
    return pix, pts


def oracle_features(prep: PreparedPair, k: int, tau: float = 0.30, L: int = 2, scale: float = 0.5) -> MatchFeatures:
    if prep.o2d is None:
        raise ValueError("prepared pair lacks overlap matrices")
    final = np.minimum(prep.o2d, prep.o3d)
    pf, nf = coarse_oracle(final, k, tau)
    levels = [pf[prep.pyramid.offsets[i]:prep.pyramid.offsets[i + 1]] for i in range(prep.pyramid.K)]
    pixels, points = fine_oracle(prep, L, scale)
    return MatchFeatures(levels, nf, pixels, points)
