import numpy as np
import pytest
from hypothesis import given, strategies as st

from xreg.errors import DegenerateConfiguration, RegistrationFailed, TooFewPoints
from xreg.geometry import CameraIntrinsics, RigidTransform, project, random_rotation, rotation_angle
from xreg.registration import (RansacConfig, draw_samples, epnp, pnp_ransac, refine_pose,
                               reprojection_error)

K = CameraIntrinsics(146.25, 146.25, 79.5, 59.5, 160, 120)


def random_problem(rng, n=20, depth=(1.0, 2.0)):
    """Pixels inside the image with depths in ``depth``, expressed in a random cloud frame."""
    uv = rng.uniform([0, 0], [K.width - 1, K.height - 1], size=(n, 2))
    z = rng.uniform(*depth, n)
    cam = np.stack([(uv[:, 0] - K.cx) / K.fx * z, (uv[:, 1] - K.cy) / K.fy * z, z], axis=1)
    t_gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    return t_gt.inverse().apply(cam), uv, t_gt


@given(st.integers(0, 2**31 - 1))
def test_epnp_noise_free(seed):
    rng = np.random.default_rng(seed)
    X, uv, t_gt = random_problem(rng)
    t = epnp(X, uv, K)
    assert rotation_angle(t.rotation.T @ t_gt.rotation) < 1e-3
    assert np.linalg.norm(t.translation - t_gt.translation) < 1e-3


def test_epnp_minimal_and_errors():
    rng = np.random.default_rng(1)
    X, uv, t_gt = random_problem(rng, n=6)
    t = epnp(X, uv, K)
    assert np.max(reprojection_error(X, uv, t, K)) < 1e-6
    with pytest.raises(TooFewPoints):
        epnp(X[:3], uv[:3], K)
    line = np.outer(np.linspace(0, 1, 6), [1.0, 0.5, 0.2]) + [0, 0, 2]
    with pytest.raises(DegenerateConfiguration):
        epnp(line, project(line, K), K)


def test_epnp_planar_points():
    rng = np.random.default_rng(2)
    uv = rng.uniform([0, 0], [159, 119], size=(12, 2))
    cam = np.stack([(uv[:, 0] - K.cx) / K.fx * 1.5, (uv[:, 1] - K.cy) / K.fy * 1.5, np.full(12, 1.5)], 1)
    t_gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    t = epnp(t_gt.inverse().apply(cam), uv, K)
    assert rotation_angle(t.rotation.T @ t_gt.rotation) < 1e-6


def test_reprojection_error_behind_camera():
    t = RigidTransform.identity()
    err = reprojection_error(np.array([[0.0, 0, 1], [0, 0, -1]]), np.array([[K.cx, K.cy], [K.cx, K.cy]]), t, K)
    assert err[0] == 0.0 and np.isinf(err[1])


def test_ransac_config_validation():
    RansacConfig()
    assert (RansacConfig().iterations, RansacConfig().inlier_tol) == (5000, 8.0)
    for bad in (dict(iterations=0), dict(inlier_tol=0.0), dict(sample_size=3), dict(refine_iters=-1)):
        with pytest.raises(ValueError):
            RansacConfig(**bad)


def test_draw_samples_distinct_and_deterministic():
    s = draw_samples(6, 500, 4, 3)
    assert s.shape == (500, 4)
    assert all(len(set(r)) == 4 for r in s.tolist())
    assert np.array_equal(s, draw_samples(6, 500, 4, 3))
    assert not np.array_equal(s, draw_samples(6, 500, 4, 4))


def test_ransac_with_outliers():
    rng = np.random.default_rng(5)
    X, uv, t_gt = random_problem(rng, n=100)
    bad = rng.random(100) < 0.4
    uv = uv.copy()
    uv[bad] = rng.uniform([0, 0], [159, 119], size=(bad.sum(), 2))
    res = pnp_ransac(X, uv, K, RansacConfig(iterations=1000, seed=0))
    assert rotation_angle(res.transform.rotation.T @ t_gt.rotation) < 1e-6
    assert np.all(res.inliers[~bad])
    # a spurious outlier may land within tolerance by chance
    assert res.num_inliers <= 100
    again = pnp_ransac(X, uv, K, RansacConfig(iterations=1000, seed=0))
    assert np.array_equal(again.transform.matrix, res.transform.matrix)


def test_ransac_failures():
    rng = np.random.default_rng(6)
    X, uv, _ = random_problem(rng, n=3)
    with pytest.raises(TooFewPoints):
        pnp_ransac(X, uv, K)
    X = rng.normal(size=(30, 3)) + [0, 0, 3]
    uv = rng.uniform([0, 0], [159, 119], size=(30, 2)) * 1000
    with pytest.raises(RegistrationFailed):
        pnp_ransac(X, uv, K, RansacConfig(iterations=50))


def test_refine_pose_reduces_error():
    rng = np.random.default_rng(7)
    X, uv, t_gt = random_problem(rng, n=50)
    uv = uv + rng.normal(0, 0.5, uv.shape)
    w = 0.02 * rng.normal(size=3)
    R0 = t_gt.rotation @ np.array([[1, -w[2], w[1]], [w[2], 1, -w[0]], [-w[1], w[0], 1]])
    u, _, vt = np.linalg.svd(R0)
    start = RigidTransform(u @ vt, t_gt.translation + 0.02)
    e0 = np.sum(reprojection_error(X, uv, start, K) ** 2)
    out = refine_pose(X, uv, K, start)
    assert np.sum(reprojection_error(X, uv, out, K) ** 2) < e0
    assert np.allclose(out.rotation.T @ out.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(refine_pose(X, uv, K, start, iters=0).matrix, start.matrix, atol=1e-12)
