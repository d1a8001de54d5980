import itertools

import numpy as np
import pytest

from sketchshape import gmm, metrics
from sketchshape.mesh import extract_mesh


def brute_force_chamfer(p, g):
    d = np.linalg.norm(p[:, None, :] - g[None, :, :], axis=2)
    return (d.min(axis=1) ** 2).mean() + (d.min(axis=0) ** 2).mean()


def brute_force_emd(p, g):
    n = len(p)
    d = np.linalg.norm(p[:, None, :] - g[None, :, :], axis=2)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, d[np.arange(n), perm].sum() / n)
    return best


def test_chamfer_identical_zero():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    assert metrics.chamfer(pts, pts) == 0.0


def test_chamfer_singletons():
    assert metrics.chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == pytest.approx(2.0)


@pytest.mark.parametrize("trial", range(20))
def test_chamfer_matches_brute_force(trial):
    rng = np.random.default_rng(trial)
    p = rng.normal(size=(8, 3))
    g = rng.normal(size=(11, 3))
    assert abs(metrics.chamfer(p, g) - brute_force_chamfer(p, g)) < 1e-12


def test_emd_identical_zero():
    pts = np.random.default_rng(1).normal(size=(30, 3))
    assert metrics.emd(pts, pts) == 0.0


def test_emd_singletons_unit_offset():
    assert metrics.emd(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == pytest.approx(1.0)


@pytest.mark.parametrize("trial", range(10))
def test_emd_matches_permutation_enumeration(trial):
    rng = np.random.default_rng(100 + trial)
    p = rng.normal(size=(6, 3))
    g = rng.normal(size=(6, 3))
    assert abs(metrics.emd(p, g) - brute_force_emd(p, g)) < 1e-12


def test_emd_unequal_sizes_rejected():
    with pytest.raises(ValueError):
        metrics.emd(np.zeros((3, 3)), np.zeros((4, 3)))


def test_symmetry_and_rigid_invariance():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(40, 3))
    g = rng.normal(size=(40, 3))
    assert abs(metrics.chamfer(p, g) - metrics.chamfer(g, p)) < 1e-12
    assert abs(metrics.emd(p, g) - metrics.emd(g, p)) < 1e-12
    theta = 0.9
    rot = np.array(
        [[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]]
    )
    shift = np.array([0.5, -1.0, 2.0])
    assert metrics.chamfer(p @ rot.T + shift, g @ rot.T + shift) == pytest.approx(
        metrics.chamfer(p, g), abs=1e-9
    )
    assert metrics.emd(p @ rot.T + shift, g @ rot.T + shift) == pytest.approx(
        metrics.emd(p, g), abs=1e-9
    )


def test_frechet_one_dimensional_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mu1, mu2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.1, 2.0, size=2)
        got = metrics.frechet_gaussian([mu1], [[s1**2]], [mu2], [[s2**2]])
        expected = (mu1 - mu2) ** 2 + (s1 - s2) ** 2
        assert got == pytest.approx(expected, abs=1e-10)


def blob(mu, scale):
    part = gmm.GaussianPart(np.array(mu), np.eye(3), np.full(3, scale), 1.0)
    return gmm.ShapeGMM((part,), np.zeros((1, 4)))


def box_like():
    parts = tuple(
        gmm.GaussianPart(np.array(mu), np.eye(3), np.array(sc), 1.0)
        for mu, sc in [
            ((0.0, 0.0, 0.0), (0.45, 0.45, 0.1)),
            ((0.0, 0.0, 0.3), (0.45, 0.1, 0.3)),
        ]
    )
    return gmm.ShapeGMM(parts, np.zeros((2, 4)))


def test_fid_lite_identical_zero():
    m = extract_mesh(blob((0, 0, 0), 0.4), resolution=24)
    assert abs(metrics.fid_lite(m, m)) < 1e-6


def test_fid_lite_distinct_positive_and_deterministic():
    ma = extract_mesh(blob((0, 0, 0), 0.4), resolution=24)
    mb = extract_mesh(box_like(), resolution=24)
    v1 = metrics.fid_lite(ma, mb)
    v2 = metrics.fid_lite(ma, mb)
    assert v1 > 0.0
    assert v1 == v2


def test_fid_lite_symmetric():
    ma = extract_mesh(blob((0, 0, 0), 0.35), resolution=24)
    mb = extract_mesh(blob((0.2, 0, 0), 0.3), resolution=24)
    assert metrics.fid_lite(ma, mb) == pytest.approx(metrics.fid_lite(mb, ma), abs=1e-6)


def test_render_views_shape_and_content():
    m = extract_mesh(blob((0, 0, 0), 0.4), resolution=24)
    renders = metrics.render_shading_views(m, views=20, size=64)
    assert renders.shape == (20, 64, 64)
    assert renders.max() <= 1.0 and renders.min() >= 0.0
    assert (renders.reshape(20, -1).max(axis=1) > 0).all()  # every view sees the blob


def test_sampled_metrics_identical_shape():
    shape = blob((0, 0, 0), 0.35)
    report = metrics.sampled_metrics(shape, shape, n=512, seed=3, resolution=24)
    assert report["cd"] == 0.0
    assert report["emd"] == 0.0
    assert report["n"] == 512 and report["seed"] == 3 and report["subsample"] == 256


def test_sampled_metrics_translated_lower_bound():
    t = 0.8
    report = metrics.sampled_metrics(
        blob((-t / 2, 0, 0), 0.2), blob((t / 2, 0, 0), 0.2), n=512, seed=0, resolution=24
    )
    r = 0.2 * np.sqrt(2 * np.log(2))  # surface radius at iso 0.5
    gap = t - 2 * r
    assert report["cd"] >= gap**2