"""Distance-derived adjacency targets and part grouping of Gaussian centers.

Pairwise distances between part centers are max-normalized and inverted so
that near parts get values close to 1; the result doubles as a regression
target and as the graph used for part clustering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor2, make_op

__all__ = [
    "DegenerateInput",
    "PartAssignment",
    "pseudo_adjacency",
    "hierarchical_cluster",
    "dendrogram_merges",
    "part_pseudo_adjacency",
    "pool_by_parts",
    "unpool",
]


class DegenerateInput(ValueError):
    """All points coincide; no distance scale exists."""


@dataclass(frozen=True)
class PartAssignment:
    """Maps each of n items to one of k non-empty clusters."""

    n: int
    k: int
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != self.n:
            raise ValueError(f"{len(self.labels)} labels for n={self.n}")
        if not (1 <= self.k <= self.n):
            raise ValueError(f"k={self.k} out of range for n={self.n}")
        seen = set(self.labels)
        if seen != set(range(self.k)):
            raise ValueError(f"labels must cover 0..{self.k - 1}, got {sorted(seen)}")

    def members(self, label: int) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.labels) if l == label)


def pseudo_adjacency(means: np.ndarray) -> np.ndarray:
    """Inverted max-normalized pairwise distances: A_ij = 1 - d_ij / d_max.

    Symmetric, diagonal exactly 1, entries in [0, 1]; the farthest pair
    maps to exactly 0.
    """
    means = np.asarray(means, dtype=np.float64)
    n = means.shape[0]
    if means.ndim != 2 or means.shape[1] != 3:
        raise ValueError(f"means must be (n, 3), got {means.shape}")
    if n < 2:
        raise ValueError("need at least 2 points")
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    d_max = dist.max()
    if d_max == 0.0:
        raise DegenerateInput("all points coincide")
    adj = 1.0 - dist / d_max
    np.fill_diagonal(adj, 1.0)
    return adj


def _average_linkage(dis: np.ndarray, k: int):
    """Agglomerate to k clusters on a dissimilarity matrix.

    Cluster-pair dissimilarity is the mean of member-pair entries, summed in
    sorted member order so results are bit-reproducible. Ties break on the
    lexicographically smallest pair of cluster representatives (smallest
    member index). Returns (clusters, merges); merges are
    (step, (rep_i, rep_j), height).
    """
    n = dis.shape[0]
    clusters: list[tuple[int, ...]] = [(i,) for i in range(n)]
    merges = []
    step = 0
    while len(clusters) > k:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                ca, cb = clusters[a], clusters[b]
                total = math.fsum(dis[i, j] for i in ca for j in cb)
                avg = total / (len(ca) * len(cb))
                key = (avg, min(ca), min(cb))
                if best is None or key < best[0]:
                    best = (key, a, b)
        (avg, rep_i, rep_j), a, b = best
        merged = tuple(sorted(clusters[a] + clusters[b]))
        merges.append((step, (rep_i, rep_j), avg))
        clusters = [c for idx, c in enumerate(clusters) if idx not in (a, b)]
        clusters.append(merged)
        step += 1
    clusters.sort(key=min)
    return clusters, merges


def hierarchical_cluster(adj: np.ndarray, k: int) -> PartAssignment:
    """Average-linkage clustering on dissimilarity 1 - adj, down to k clusters.

    Deterministic; labels are renumbered by each cluster's smallest member.
    """
    adj = np.asarray(adj, dtype=np.float64)
    n = adj.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    clusters, _ = _average_linkage(1.0 - adj, k)
    labels = [0] * n
    for label, members in enumerate(clusters):
        for i in members:
            labels[i] = label
    return PartAssignment(n=n, k=k, labels=tuple(labels))


def dendrogram_merges(adj: np.ndarray) -> list[dict]:
    """Full merge history down to one cluster, as JSON-friendly records."""
    adj = np.asarray(adj, dtype=np.float64)
    _, merges = _average_linkage(1.0 - adj, 1)
    return [{"step": s, "pair": [int(i), int(j)], "height": float(h)} for s, (i, j), h in merges]


def part_pseudo_adjacency(means: np.ndarray, assign: PartAssignment) -> np.ndarray:
    """Adjacency over per-cluster mean coordinates, same normalize-then-invert rule."""
    means = np.asarray(means, dtype=np.float64)
    if means.shape[0] != assign.n:
        raise ValueError(f"{means.shape[0]} means vs assignment over n={assign.n}")
    reps = np.stack([means[list(assign.members(c))].mean(axis=0) for c in range(assign.k)])
    return pseudo_adjacency(reps)


def pool_by_parts(q: Tensor2, assign: PartAssignment) -> Tensor2:
    """Per-cluster row mean (k x d). Pooling rows that are identical returns
    them bit-exactly (anchored mean), so pool(unpool(y)) == y."""
    if q.rows != assign.n:
        raise ValueError(f"q has {q.rows} rows, assignment expects {assign.n}")
    member_lists = [list(assign.members(c)) for c in range(assign.k)]
    out = np.empty((assign.k, q.cols))
    for c, members in enumerate(member_lists):
        rows = q.data[members]
        out[c] = rows[0] + (rows - rows[0]).mean(axis=0)

    def backward(g):
        dq = np.zeros_like(q.data)
        for c, members in enumerate(member_lists):
            dq[members] += g[c] / len(members)
        if q.grad is None:
            q.grad = dq
        else:
            q.grad = q.grad + dq

    return make_op("pool_by_parts", out, (q,), backward)


def unpool(qp: Tensor2, assign: PartAssignment) -> Tensor2:
    """Broadcast each cluster row back to its members (n x d)."""
    if qp.rows != assign.k:
        raise ValueError(f"qp has {qp.rows} rows, assignment expects k={assign.k}")
    labels = np.array(assign.labels)
    out = qp.data[labels].copy()

    def backward(g):
        dqp = np.zeros_like(qp.data)
        np.add.at(dqp, labels, g)
        if qp.grad is None:
            qp.grad = dqp
        else:
            qp.grad = qp.grad + dqp

    return make_op("unpool", out, (qp,), backward)
