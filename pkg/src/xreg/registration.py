"""Pose recovery from 2D-3D correspondences: EPnP inside a RANSAC loop.

The EPnP solver is vectorized over a batch of problems of equal size so
that thousands of RANSAC hypotheses are solved in a few numpy calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DegenerateConfiguration, RegistrationFailed, TooFewPoints
from .geometry import CameraIntrinsics, RigidTransform, project_unchecked


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 5000
    inlier_tol: float = 8.0
    sample_size: int = 4
    seed: int = 0
    refine_iters: int = 10

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_tol <= 0 or self.sample_size < 4 or self.refine_iters < 0:
            raise ValueError("invalid RANSAC configuration")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    inliers: np.ndarray
    mean_error: float

    @property
    def num_inliers(self) -> int:
        return int(self.inliers.sum())


def reprojection_error(points, pixels, t: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
    """Unsquared pixel distance between projected points and their pixels; +inf behind the camera."""
    cam = t.apply(np.asarray(points, dtype=np.float64))
    uv, front = project_unchecked(cam, k)
    err = np.sqrt(((uv - np.asarray(pixels, dtype=np.float64)) ** 2).sum(-1))
    return np.where(front, err, np.inf)


def _batch_reprojection(R, t, X, uv, k: CameraIntrinsics):
    """Errors (B, n) for poses (B,3,3),(B,3) applied to shared X (n,3) or per-batch X (B,n,3)."""
    if X.ndim == 2:
        cam = np.einsum("bij,nj->bni", R, X) + t[:, None, :]
    else:
        cam = np.einsum("bij,bnj->bni", R, X) + t[:, None, :]
    z = cam[..., 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    du = k.fx * cam[..., 0] / zs + k.cx - uv[..., 0]
    dv = k.fy * cam[..., 1] / zs + k.cy - uv[..., 1]
    return np.where(front, np.sqrt(du * du + dv * dv), np.inf)


def _procrustes(X, Y):
    """Batched rigid fit Y ≈ R X + t."""
    mx, my = X.mean(1), Y.mean(1)
    H = np.einsum("bni,bnj->bij", X - mx[:, None], Y - my[:, None])
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros_like(H)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = my - np.einsum("bij,bj->bi", R, mx)
    return R, t


def _betas_linearized(dv, rho, n_use):
    """Initial betas from the linearized distance constraints using ``n_use`` kernel vectors."""
    B, npairs, _, nk = dv.shape
    if n_use == 1:
        d1 = np.linalg.norm(dv[..., 0], axis=-1)
        beta = (d1 * np.sqrt(rho)).sum(1) / np.maximum((d1 * d1).sum(1), 1e-300)
        out = np.zeros((B, nk))
        out[:, 0] = beta
        return out
    terms = [(a, b) for a in range(n_use) for b in range(a, n_use)]
    if len(terms) > npairs:
        return None
    L = np.stack([(1.0 if a == b else 2.0) * (dv[..., a] * dv[..., b]).sum(-1) for a, b in terms], axis=-1)
    LtL = np.einsum("bpi,bpj->bij", L, L) + 1e-12 * np.eye(len(terms))
    x = np.linalg.solve(LtL, np.einsum("bpi,bp->bi", L, rho)[..., None])[..., 0]
    out = np.zeros((B, nk))
    out[:, 0] = np.sqrt(np.abs(x[:, 0]))
    for a in range(1, n_use):
        sq = x[:, terms.index((a, a))]
        cross = x[:, terms.index((0, a))]
        out[:, a] = np.sign(cross) * np.sqrt(np.abs(sq))
    return out


def _gauss_newton(beta, dv, rho, iters=8):
    for _ in range(iters):
        diff = np.einsum("bpck,bk->bpc", dv, beta)
        r = (diff * diff).sum(-1) - rho
        J = 2.0 * np.einsum("bpc,bpck->bpk", diff, dv)
        JtJ = np.einsum("bpi,bpj->bij", J, J) + 1e-12 * np.eye(beta.shape[1])
        step = np.linalg.solve(JtJ, np.einsum("bpi,bp->bi", J, r)[..., None])[..., 0]
        beta = beta - step
    return beta


def _epnp_batch(X, uv, k: CameraIntrinsics, planar_tol: float = 1e-4):
    """EPnP for a batch of equally sized problems.

    Returns ``(R (B,3,3), t (B,3), ok (B,))``; ``ok`` is False for degenerate
    (collinear) inputs.
    """
    X = np.asarray(X, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    B, n, _ = X.shape
    c0 = X.mean(1)
    A = X - c0[:, None]
    w, V = np.linalg.eigh(np.einsum("bni,bnj->bij", A, A) / n)
    w = np.maximum(w, 0.0)
    scale = np.sqrt(w[:, 2])
    # eigh round-off leaves ~sqrt(eps) * scale on a vanishing axis
    collinear = np.sqrt(w[:, 1]) <= 1e-6 * np.maximum(scale, 1e-300)
    planar = np.sqrt(w[:, 0]) <= planar_tol * np.maximum(scale, 1e-300)
    R = np.tile(np.eye(3), (B, 1, 1))
    t = np.zeros((B, 3))
    ok = ~collinear
    for nc, sel in ((4, ok & ~planar), (3, ok & planar)):
        idx = np.flatnonzero(sel)
        if len(idx) == 0:
            continue
        if nc == 3 and n < 4:
            ok[idx] = False
            continue
        Ri, ti = _epnp_group(X[idx], uv[idx], A[idx], c0[idx], w[idx], V[idx], k, nc)
        R[idx], t[idx] = Ri, ti
    return R, t, ok


def _epnp_group(X, uv, A, c0, w, V, k, nc):
    B, n, _ = X.shape
    dirs = V[:, :, ::-1][:, :, :nc - 1]             # principal axes, largest first
    sd = np.sqrt(w[:, ::-1][:, :nc - 1])
    ctrl = np.concatenate([c0[:, None], c0[:, None] + np.swapaxes(dirs, 1, 2) * sd[..., None]], axis=1)
    coords = np.einsum("bni,bij->bnj", A, dirs) / sd[:, None, :]
    alpha = np.concatenate([1.0 - coords.sum(-1, keepdims=True), coords], axis=-1)   # (B,n,nc)

    M = np.zeros((B, 2 * n, 3 * nc))
    u, v = uv[..., 0], uv[..., 1]
    for j in range(nc):
        a = alpha[..., j]
        M[:, 0::2, 3 * j] = a * k.fx
        M[:, 0::2, 3 * j + 2] = a * (k.cx - u)
        M[:, 1::2, 3 * j + 1] = a * k.fy
        M[:, 1::2, 3 * j + 2] = a * (k.cy - v)
    _, evec = np.linalg.eigh(np.einsum("bri,brj->bij", M, M))
    nk = 4 if nc == 4 else 3
    kern = evec[:, :, :nk].reshape(B, nc, 3, nk)

    pairs = list(combinations(range(nc), 2))
    dv = np.stack([kern[:, a] - kern[:, b] for a, b in pairs], axis=1)          # (B,p,3,nk)
    rho = np.stack([((ctrl[:, a] - ctrl[:, b]) ** 2).sum(-1) for a, b in pairs], axis=1)

    best_err = np.full(B, np.inf)
    best_R = np.tile(np.eye(3), (B, 1, 1))
    best_t = np.zeros((B, 3))
    for n_use in (1, 2, 3):
        beta = _betas_linearized(dv, rho, n_use)
        if beta is None:
            continue
        beta = _gauss_newton(beta, dv, rho)
        cc = np.einsum("bjck,bk->bjc", kern, beta)                              # (B,nc,3)
        Xc = np.einsum("bnj,bjc->bnc", alpha, cc)
        flip = Xc[..., 2].mean(1) < 0
        Xc[flip] *= -1.0
        Ri, ti = _procrustes(X, Xc)
        err = _batch_reprojection(Ri, ti, X, uv, k).mean(1)
        err = np.where(np.isfinite(err), err, np.inf)
        better = err < best_err
        best_err = np.where(better, err, best_err)
        best_R[better], best_t[better] = Ri[better], ti[better]
    return best_R, best_t


def epnp(points, pixels, k: CameraIntrinsics) -> RigidTransform:
    """Closed-form EPnP pose (cloud frame -> camera frame) from >= 4 correspondences."""
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(X) < 4 or len(uv) != len(X):
        raise TooFewPoints(f"EPnP needs at least 4 correspondences, got {len(X)}")
    R, t, ok = _epnp_batch(X[None], uv[None], k)
    if not ok[0] or not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
        raise DegenerateConfiguration("correspondences are degenerate")
    u, _, vt = np.linalg.svd(R[0])
    return RigidTransform(u @ vt, t[0])


def draw_samples(n: int, iterations: int, size: int, seed: int) -> np.ndarray:
    """Distinct-index minimal samples, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    s = rng.integers(0, n, size=(iterations, size))
    while True:
        srt = np.sort(s, axis=1)
        bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(1))
        if len(bad) == 0:
            return s
        s[bad] = rng.integers(0, n, size=(len(bad), size))


def pnp_ransac(points, pixels, k: CameraIntrinsics, cfg: RansacConfig = RansacConfig(),
               chunk: int = 1000) -> RegistrationResult:
    """Best-inlier-count EPnP hypothesis, refit on its inliers.

    Ties in inlier count go to the lower mean inlier error, then to the
    earlier iteration.
    """
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(X)
    if n < cfg.sample_size:
        raise TooFewPoints(f"need at least {cfg.sample_size} correspondences, got {n}")
    samples = draw_samples(n, cfg.iterations, cfg.sample_size, cfg.seed)
    best = (-1, np.inf, -1)
    best_pose = None
    for s in range(0, cfg.iterations, chunk):
        idx = samples[s:s + chunk]
        R, t, ok = _epnp_batch(X[idx], uv[idx], k)
        err = _batch_reprojection(R, t, X, uv, k)
        inl = (err <= cfg.inlier_tol) & ok[:, None] & np.isfinite(R).all((1, 2))[:, None]
        cnt = inl.sum(1)
        mean_err = np.where(cnt > 0, np.where(inl, err, 0.0).sum(1) / np.maximum(cnt, 1), np.inf)
        order = np.lexsort((np.arange(len(cnt)), mean_err, -cnt))
        j = order[0]
        cand = (int(cnt[j]), float(mean_err[j]), s + int(j))
        if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
            best = cand
            best_pose = (R[j].copy(), t[j].copy())
    if best[0] < cfg.sample_size:
        raise RegistrationFailed(f"best hypothesis has only {max(best[0], 0)} inliers")
    u, _, vt = np.linalg.svd(best_pose[0])
    pose = RigidTransform(u @ vt, best_pose[1])
    mask = reprojection_error(X, uv, pose, k) <= cfg.inlier_tol
    # two refit rounds on the current inlier set
    for _ in range(2):
        try:
            refit = epnp(X[mask], uv[mask], k)
        except (DegenerateConfiguration, TooFewPoints, ValueError, np.linalg.LinAlgError):
            break
        refit = refine_pose(X[mask], uv[mask], k, refit, cfg.refine_iters)
        new_mask = reprojection_error(X, uv, refit, k) <= cfg.inlier_tol
        if new_mask.sum() < cfg.sample_size:
            break
        pose, mask = refit, new_mask
    err = reprojection_error(X, uv, pose, k)
    return RegistrationResult(pose, mask, float(err[mask].mean()) if mask.any() else float("inf"))


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _so3_exp(w):
    th = np.linalg.norm(w)
    if th < 1e-12:
        return np.eye(3) + _skew(w)
    K = _skew(w / th)
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K


def refine_pose(points, pixels, k: CameraIntrinsics, pose: RigidTransform, iters: int = 10) -> RigidTransform:
    """Levenberg-Marquardt on the summed squared reprojection error; steps that do not help are rejected."""
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(X)

    def residuals(R, t):
        c = X @ R.T + t
        if np.any(c[:, 2] <= 0):
            return c, None
        return c, np.stack([k.fx * c[:, 0] / c[:, 2] + k.cx, k.fy * c[:, 1] / c[:, 2] + k.cy], 1) - uv

    def cost(r):
        return np.inf if r is None else float((r * r).sum())

    R, t = pose.rotation.copy(), pose.translation.copy()
    c, r = residuals(R, t)
    best = cost(r)
    lam = 1e-3
    for _ in range(iters):
        if not np.isfinite(best):
            break
        x, y, z = c[:, 0], c[:, 1], c[:, 2]
        rv = np.concatenate([r[:, 0], r[:, 1]])
        Jp = np.zeros((2 * n, 3))
        Jp[:n, 0] = k.fx / z
        Jp[:n, 2] = -k.fx * x / z ** 2
        Jp[n:, 1] = k.fy / z
        Jp[n:, 2] = -k.fy * y / z ** 2
        # d c / d omega = -[c]x, d c / d t = I
        cx = np.zeros((n, 3, 3))
        cx[:, 0, 1], cx[:, 0, 2] = z, -y
        cx[:, 1, 0], cx[:, 1, 2] = -z, x
        cx[:, 2, 0], cx[:, 2, 1] = y, -x
        Jw = np.concatenate([np.einsum("nj,njk->nk", Jp[:n], cx), np.einsum("nj,njk->nk", Jp[n:], cx)])
        J = np.concatenate([Jw, Jp], axis=1)
        H = J.T @ J
        g = J.T @ rv
        improved = False
        for _ in range(10):
            step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            dR = _so3_exp(step[:3])
            R2, t2 = dR @ R, dR @ t + step[3:]
            c2, r2 = residuals(R2, t2)
            f2 = cost(r2)
            if f2 < best:
                R, t, c, r, best = R2, t2, c2, r2, f2
                lam = max(lam * 0.3, 1e-9)
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
    u, _, vt = np.linalg.svd(R)
    return RigidTransform(u @ vt, t)
