"""Point-cloud and rendered-view metrics.

Chamfer distance is the symmetric mean of squared nearest-neighbor
distances. The transport metric is solved exactly as an equal-size optimal
assignment (the doubly-stochastic relaxation attains its optimum at a
permutation), so large clouds are subsampled before solving. The
"FID-lite" score renders 20 fixed shading views per mesh, extracts features
with a fixed seeded convolutional featurizer, and averages the per-view
Gaussian Frechet distance over spatial feature statistics. It is
self-consistent and deterministic but not comparable to scores computed
with a pretrained classifier network.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .mesh import TriMesh, extract_mesh, sample_surface

__all__ = [
    "chamfer",
    "emd",
    "frechet_gaussian",
    "FixedConvFeaturizer",
    "view_directions",
    "render_shading_views",
    "fid_lite",
    "sampled_metrics",
]


def chamfer(p: np.ndarray, g: np.ndarray) -> float:
    """Sum of both directed means of squared nearest-neighbor distances."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("point sets must be non-empty")
    d_pg, _ = cKDTree(g).query(p)
    d_gp, _ = cKDTree(p).query(g)
    return float(np.mean(d_pg**2) + np.mean(d_gp**2))


def emd(p: np.ndarray, g: np.ndarray) -> float:
    """Mean per-point transport cost under the exact optimal assignment."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if len(p) != len(g):
        raise ValueError(f"equal-size point sets required, got {len(p)} vs {len(g)}")
    if len(p) == 0:
        raise ValueError("point sets must be non-empty")
    cost = np.linalg.norm(p[:, None, :] - g[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def _sqrt_psd(c: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -tol * scale:
        raise ValueError(f"covariance is not PSD (min eigenvalue {w.min()})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_gaussian(mu1, cov1, mu2, cov2) -> float:
    """Frechet distance between two Gaussians; the cross sqrt uses the
    symmetric product form sqrt(S . cov2 . S) with S = sqrt(cov1)."""
    mu1 = np.asarray(mu1, dtype=np.float64).ravel()
    mu2 = np.asarray(mu2, dtype=np.float64).ravel()
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    s = _sqrt_psd(cov1)
    inner = s @ cov2 @ s
    w = np.linalg.eigh((inner + inner.T) / 2.0)[0]
    tr_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)


def view_directions(count: int = 20) -> np.ndarray:
    """Fixed Fibonacci-sphere directions."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _camera_basis(view: np.ndarray) -> np.ndarray:
    forward = view / np.linalg.norm(view)
    helper = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(helper, forward)
    right /= np.linalg.norm(right)
    up = np.cross(forward, right)
    return np.stack([right, up, forward])  # rows: camera axes in world coords


_LIGHT_CAM = np.array([0.4, 0.6, 1.0]) / np.linalg.norm([0.4, 0.6, 1.0])
_WINDOW = 1.3  # orthographic half-width; shapes live in [-1.2, 1.2]^3


def _render_one(verts_cam: np.ndarray, tris: np.ndarray, size: int) -> np.ndarray:
    img = np.zeros((size, size))
    zbuf = np.full((size, size), -np.inf)
    xy = (verts_cam[:, :2] + _WINDOW) / (2.0 * _WINDOW) * (size - 1)
    depth = verts_cam[:, 2]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    normals = np.cross(verts_cam[b] - verts_cam[a], verts_cam[c] - verts_cam[a])
    norms = np.linalg.norm(normals, axis=1)
    visible = (normals[:, 2] > 0) & (norms > 1e-12)
    shade_all = np.clip(normals @ _LIGHT_CAM / np.maximum(norms, 1e-12), 0.0, 1.0)
    for t in np.flatnonzero(visible):
        ia, ib, ic = tris[t]
        pa, pb, pc = xy[ia], xy[ib], xy[ic]
        x_min = max(int(np.floor(min(pa[0], pb[0], pc[0]))), 0)
        x_max = min(int(np.ceil(max(pa[0], pb[0], pc[0]))), size - 1)
        y_min = max(int(np.floor(min(pa[1], pb[1], pc[1]))), 0)
        y_max = min(int(np.ceil(max(pa[1], pb[1], pc[1]))), size - 1)
        if x_min > x_max or y_min > y_max:
            continue
        xs = np.arange(x_min, x_max + 1)
        ys = np.arange(y_min, y_max + 1)
        gx, gy = np.meshgrid(xs, ys)
        v0 = pb - pa
        v1 = pc - pa
        denom = v0[0] * v1[1] - v1[0] * v0[1]
        if abs(denom) < 1e-12:
            continue
        px = gx - pa[0]
        py = gy - pa[1]
        wb = (px * v1[1] - v1[0] * py) / denom
        wc = (v0[0] * py - px * v0[1]) / denom
        wa = 1.0 - wb - wc
        inside = (wa >= -1e-9) & (wb >= -1e-9) & (wc >= -1e-9)
        if not inside.any():
            continue
        z = wa * depth[ia] + wb * depth[ib] + wc * depth[ic]
        shade = 0.15 + 0.85 * shade_all[t]
        update = inside & (z > zbuf[y_min : y_max + 1, x_min : x_max + 1])
        zb = zbuf[y_min : y_max + 1, x_min : x_max + 1]
        im = img[y_min : y_max + 1, x_min : x_max + 1]
        zb[update] = z[update]
        im[update] = shade
    return img


def render_shading_views(mesh: TriMesh, views: int = 20, size: int = 64) -> np.ndarray:
    """Deterministic orthographic Lambert renders from fixed directions."""
    if mesh.is_empty:
        raise ValueError("cannot render an empty mesh")
    out = np.empty((views, size, size))
    for i, view in enumerate(view_directions(views)):
        basis = _camera_basis(view)
        out[i] = _render_one(mesh.vertices @ basis.T, mesh.triangles, size)
    return out


class FixedConvFeaturizer:
    """Two seeded strided convolutions; feature statistics are taken over the
    spatial positions of the final feature map."""

    def __init__(self, seed: int = 99, channels: int = 64):
        rng = np.random.default_rng([seed])
        self.w1 = rng.normal(scale=0.4, size=(8, 5, 5))
        self.w2 = rng.normal(scale=0.2, size=(channels, 8, 3, 3))
        self.channels = channels

    @staticmethod
    def _conv(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
        # x: (C_in, H, W), w: (C_out, C_in, kh, kw)
        kh, kw = w.shape[-2:]
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
        win = win[:, ::stride, ::stride]
        return np.einsum("cijhw,ochw->oij", win, w)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        h1 = np.maximum(self._conv(image[None], self.w1[:, None] * 1.0, 2), 0.0)
        h2 = np.maximum(self._conv(h1, self.w2, 2), 0.0)
        return h2.reshape(self.channels, -1).T  # (positions, channels)


_DEFAULT_FEATURIZER: FixedConvFeaturizer | None = None


def fid_lite(mesh_a: TriMesh, mesh_b: TriMesh, views: int = 20, featurizer=None, size: int = 64) -> float:
    """Mean per-view Frechet distance between rendered-view feature statistics."""
    global _DEFAULT_FEATURIZER
    if featurizer is None:
        if _DEFAULT_FEATURIZER is None:
            _DEFAULT_FEATURIZER = FixedConvFeaturizer()
        featurizer = _DEFAULT_FEATURIZER
    renders_a = render_shading_views(mesh_a, views, size)
    renders_b = render_shading_views(mesh_b, views, size)
    total = 0.0
    for i in range(views):
        fa = featurizer(renders_a[i])
        fb = featurizer(renders_b[i])
        mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
        cov_a = np.cov(fa, rowvar=False)
        cov_b = np.cov(fb, rowvar=False)
        total += frechet_gaussian(mu_a, cov_a, mu_b, cov_b)
    return total / views


def sampled_metrics(
    shape_a,
    shape_b,
    n: int = 2048,
    seed: int = 0,
    resolution: int = 48,
    emd_subsample: int = 256,
) -> dict:
    """Extract meshes, sample n points from each, report {cd, emd, ...}.

    The assignment solver runs on a seeded common-index subsample of size
    `emd_subsample` when n exceeds it; the report records that deviation.
    """
    mesh_a = extract_mesh(shape_a, resolution=resolution)
    mesh_b = extract_mesh(shape_b, resolution=resolution)
    if mesh_a.is_empty or mesh_b.is_empty:
        raise ValueError("cannot compute sampled metrics on an empty mesh")
    pa = sample_surface(mesh_a, n=n, seed=seed)
    pb = sample_surface(mesh_b, n=n, seed=seed)
    cd = chamfer(pa, pb)
    sub = min(n, emd_subsample)
    idx = np.random.default_rng([seed, 915]).choice(n, size=sub, replace=False)
    transport = emd(pa[idx], pb[idx])
    return {"cd": cd, "emd": transport, "n": n, "seed": seed, "subsample": sub}
