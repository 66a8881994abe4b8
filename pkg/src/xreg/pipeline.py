"""Pair-level matching, registration and evaluation shared by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .dataset import PreparedPair, prepare_pair
from .errors import DegenerateConfiguration, RegistrationFailed, TooFewPoints
from .matching import (DenseCorrespondenceSet, PatchCorrespondenceSet, assemble, coarse_match,
                       fine_match)
from .metrics import (MetricThresholds, correspondence_errors, inlier_ratio, patch_inlier_ratio, rmse,
                      summarize, threshold_sweep)
from .neural.model import MatchFeatures, MatchingNetwork
from .oracle import oracle_features
from .registration import RansacConfig, RegistrationResult, pnp_ransac


def ransac_config(cfg: Config) -> RansacConfig:
    r = cfg.ransac
    return RansacConfig(r.iterations, r.inlier_tol, r.sample_size, r.seed, r.refine_iters)


def metric_thresholds(cfg: Config) -> MetricThresholds:
    m = cfg.metrics
    return MetricThresholds(m.tau1, m.tau2, m.tau3, m.pir_tau)


def match_features(feats: MatchFeatures, prep: PreparedPair, cfg: Config):
    """Coarse patch matches, then dense matches inside each of them."""
    coarse = coarse_match(feats.levels, feats.nodes, prep.pyramid, cfg.match.coarse_k, cfg.match.max_coarse)
    local = [fine_match(entry, prep.pyramid, feats.pixels, feats.points, prep.graph.members[entry[1]],
                        cfg.match.fine_k) for entry in coarse.entries()]
    dense = assemble(local, prep.pair.depth.shape[1], prep.points)
    return coarse, dense


def register(dense: DenseCorrespondenceSet, prep: PreparedPair, cfg: Config) -> RegistrationResult | None:
    try:
        return pnp_ransac(dense.xyz, dense.uv, prep.pair.intrinsics, ransac_config(cfg))
    except (TooFewPoints, RegistrationFailed, DegenerateConfiguration):
        return None


@dataclass
class PairResult:
    pair_id: str
    coarse: PatchCorrespondenceSet
    dense: DenseCorrespondenceSet
    registration: RegistrationResult | None
    ir: float
    rmse: float
    pir: float
    errors: np.ndarray
    meta: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {"id": self.pair_id, "ir": self.ir, "rmse": self.rmse, "pir": self.pir,
                "n_coarse": len(self.coarse), "n_dense": len(self.dense)}


def evaluate_features(feats: MatchFeatures, prep: PreparedPair, cfg: Config) -> PairResult:
    pair = prep.pair
    th = metric_thresholds(cfg)
    coarse, dense = match_features(feats, prep, cfg)
    errs = correspondence_errors(dense.uv, dense.xyz, pair.t_gt, pair.depth, pair.intrinsics)
    ir, _ = inlier_ratio(dense.uv, dense.xyz, pair.t_gt, pair.depth, pair.intrinsics, th.tau1)
    if prep.o2d is None:
        prep = prepare_pair(pair, cfg)
    final = np.minimum(prep.o2d, prep.o3d)
    pir, _ = patch_inlier_ratio(final[coarse.pooled, coarse.node], th.pir_tau)
    reg = register(dense, prep, cfg)
    err = rmse(pair.points, None if reg is None else reg.transform, pair.t_gt)
    return PairResult(pair.pair_id, coarse, dense, reg, ir, err, pir, errs, dict(pair.meta))


def network_features(model: MatchingNetwork, prep: PreparedPair) -> MatchFeatures:
    pair = prep.pair
    return model(pair.image, pair.points, prep.nodes, prep.graph.assignment).numpy()


def evaluate_dataset(pairs, cfg: Config, model: MatchingNetwork | None = None, progress=None):
    """Evaluate every pair with network features, or oracle features when ``model`` is None.

    Returns ``(results, summary, sweep_rows)``.
    """
    results = []
    for p in pairs:
        prep = prepare_pair(p, cfg)
        if model is None:
            feats = oracle_features(prep, cfg.match.coarse_k, cfg.metrics.pir_tau, cfg.synth.oracle_fourier,
                                    cfg.synth.oracle_scale)
        else:
            feats = network_features(model, prep)
        res = evaluate_features(feats, prep, cfg)
        results.append(res)
        if progress is not None:
            progress(res)
    recs = [r.record() for r in results]
    th = metric_thresholds(cfg)
    summary = summarize(recs, th)
    sweep = threshold_sweep([r.errors for r in results], [r.rmse for r in results], tau2=th.tau2)
    return results, summary, sweep
