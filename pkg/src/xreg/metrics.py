"""Inlier ratio, feature matching recall, RMSE / registration recall and patch inlier ratio."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, RigidTransform, unproject
from .groundtruth import OverlapThresholds, patch_overlap


@dataclass(frozen=True)
class MetricThresholds:
    tau1: float = 0.05
    tau2: float = 0.10
    tau3: float = 0.10
    pir_tau: float = 0.30

    def __post_init__(self):
        if min(self.tau1, self.tau2, self.tau3, self.pir_tau) <= 0:
            raise ValueError("metric thresholds must be positive")


def correspondence_errors(uv, xyz, t_gt: RigidTransform, depth: DepthMap, k: CameraIntrinsics) -> np.ndarray:
    """3D distance between each transformed point and its lifted pixel; +inf for invalid depth."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(uv) == 0:
        return np.zeros(0)
    h, w = depth.shape
    col = np.rint(uv[:, 0]).astype(np.int64)
    row = np.rint(uv[:, 1]).astype(np.int64)
    inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    z = np.full(len(uv), np.nan)
    z[inside] = depth.values[row[inside], col[inside]]
    ok = np.isfinite(z) & (z > 0)
    err = np.full(len(uv), np.inf)
    if ok.any():
        lifted = unproject(uv[ok], z[ok], k)
        err[ok] = np.linalg.norm(t_gt.apply(xyz[ok]) - lifted, axis=1)
    return err


def inlier_ratio(uv, xyz, t_gt: RigidTransform, depth: DepthMap, k: CameraIntrinsics,
                 tau1: float = 0.05):
    """Fraction of correspondences within ``tau1`` (strict) in 3D.

    Returns ``(ratio, defined)``; an empty set gives ``(0.0, False)``.
    """
    err = correspondence_errors(uv, xyz, t_gt, depth, k)
    if len(err) == 0:
        return 0.0, False
    return float(np.mean(err < tau1)), True


def feature_matching_recall(irs, tau2: float = 0.10) -> float:
    irs = np.asarray(irs, dtype=np.float64)
    if irs.size == 0:
        raise ValueError("need at least one pair")
    return float(np.mean(irs > tau2))


def rmse(points, t: RigidTransform | None, t_gt: RigidTransform) -> float:
    """Root mean square distance between the cloud under ``t`` and under ``t_gt``; inf if ``t`` is None."""
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    if t is None:
        return float("inf")
    d = t.apply(pts) - t_gt.apply(pts)
    return float(np.sqrt(np.mean((d * d).sum(1))))


def registration_recall(rmses, tau3: float = 0.10) -> float:
    r = np.asarray(rmses, dtype=np.float64)
    if r.size == 0:
        raise ValueError("need at least one pair")
    return float(np.mean(r < tau3))


def patch_overlaps(patch_pixels, patch_points, t_gt: RigidTransform, depth: DepthMap, k: CameraIntrinsics,
                   th: OverlapThresholds = OverlapThresholds()) -> np.ndarray:
    """Final (min) overlap of each (pixel set, point set) patch correspondence."""
    return np.array([patch_overlap(p, q, t_gt, depth, k, th)[2] for p, q in zip(patch_pixels, patch_points)],
                    dtype=np.float64)


def patch_inlier_ratio(overlaps, pir_tau: float = 0.30):
    """Fraction of patch correspondences with final overlap strictly above ``pir_tau``.

    Returns ``(ratio, defined)``.
    """
    o = np.asarray(overlaps, dtype=np.float64)
    if o.size == 0:
        return 0.0, False
    return float(np.mean(o > pir_tau)), True


def summarize(per_pair, th: MetricThresholds = MetricThresholds()) -> dict:
    """Dataset-level numbers from per-pair records with keys ``ir``, ``rmse``, ``pir``."""
    if not per_pair:
        return {"IR": 0.0, "FMR": 0.0, "RR": 0.0, "PIR": 0.0}
    irs = [r["ir"] for r in per_pair]
    return {
        "IR": float(np.mean(irs)),
        "FMR": feature_matching_recall(irs, th.tau2),
        "RR": registration_recall([r["rmse"] for r in per_pair], th.tau3),
        "PIR": float(np.mean([r["pir"] for r in per_pair])),
    }


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def report_json(per_pair, summary) -> str:
    rows = [{"id": r.get("id", str(i)), "ir": _num(r["ir"]), "rmse": _num(r["rmse"]), "pir": _num(r["pir"])}
            for i, r in enumerate(per_pair)]
    return json.dumps({"per_pair": rows, "summary": {k: _num(v) for k, v in summary.items()}},
                      indent=2, sort_keys=True) + "\n"


def report_csv(per_pair) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", "ir", "rmse", "pir"])
    for i, r in enumerate(per_pair):
        w.writerow([r.get("id", i), repr(float(r["ir"])), repr(float(r["rmse"])), repr(float(r["pir"]))])
    return buf.getvalue()


def threshold_sweep(per_pair_errors, rmses, tau1_grid=None, tau3_grid=None, tau2: float = 0.10):
    """Curves of IR/FMR against tau1 and RR against tau3.

    ``per_pair_errors`` holds the per-correspondence 3D errors of each pair.
    Returns a list of dict rows ``{"curve","threshold","value"}``.
    """
    tau1_grid = np.linspace(0.01, 0.20, 20) if tau1_grid is None else np.asarray(tau1_grid)
    tau3_grid = np.linspace(0.01, 0.50, 50) if tau3_grid is None else np.asarray(tau3_grid)
    rows = []
    for t in tau1_grid:
        irs = [float(np.mean(e < t)) if len(e) else 0.0 for e in per_pair_errors]
        rows.append({"curve": "IR", "threshold": float(t), "value": float(np.mean(irs)) if irs else 0.0})
        rows.append({"curve": "FMR", "threshold": float(t),
                     "value": feature_matching_recall(irs, tau2) if irs else 0.0})
    for t in tau3_grid:
        rows.append({"curve": "RR", "threshold": float(t),
                     "value": registration_recall(rmses, t) if len(rmses) else 0.0})
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curve", "threshold", "value"])
    for r in rows:
        w.writerow([r["curve"], repr(r["threshold"]), repr(r["value"])])
    return buf.getvalue()
