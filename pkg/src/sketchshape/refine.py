"""Graph refinement of decoded queries.

Two parallel paths: a node-level graph convolution over all N queries and a
part-level one over cluster-pooled queries, each driven by an adjacency
matrix predicted from the queries themselves (sigmoid of a symmetrized Gram
product). The paths are fused with a configurable weight alpha and a
residual connection, then normalized; a 2-layer head maps the result to
per-part latent vectors.

The predicted adjacency (not the pseudo-ground-truth target) drives the
convolution, so inference needs no ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adjacency import PartAssignment, pool_by_parts, unpool
from .autodiff import Parameter, Tensor2, leaf_of
from .decoder import NormParams

__all__ = [
    "MlpParams",
    "RefinerParams",
    "init_mlp",
    "init_refiner",
    "mlp_forward",
    "predict_adjacency",
    "gcn_forward",
    "refiner_forward",
    "latent_head",
]


@dataclass
class MlpParams:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class RefinerParams:
    node_adj: MlpParams
    part_adj: MlpParams
    node_gcn: list[Parameter]
    part_gcn: list[Parameter]
    fusion_norm: NormParams
    head: MlpParams
    alpha: float = 0.8

    def parameters(self):
        out = self.node_adj.parameters() + self.part_adj.parameters()
        out += self.node_gcn + self.part_gcn
        out += self.fusion_norm.parameters() + self.head.parameters()
        return out

    def node_path_parameters(self):
        return self.node_adj.parameters() + self.node_gcn

    def part_path_parameters(self):
        return self.part_adj.parameters() + self.part_gcn


def init_mlp(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int, prefix: str) -> MlpParams:
    return MlpParams(
        w1=Parameter(f"{prefix}.w1", rng.normal(scale=0.02, size=(d_in, d_hidden))),
        b1=Parameter(f"{prefix}.b1", np.zeros((1, d_hidden))),
        w2=Parameter(f"{prefix}.w2", rng.normal(scale=0.02, size=(d_hidden, d_out))),
        b2=Parameter(f"{prefix}.b2", np.zeros((1, d_out))),
    )


def init_refiner(
    rng: np.random.Generator,
    d: int,
    d_adj: int = 32,
    d_latent: int = 32,
    gcn_layers: int = 2,
    alpha: float = 0.8,
) -> RefinerParams:
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return RefinerParams(
        node_adj=init_mlp(rng, d, d, d_adj, "refine.node_adj"),
        part_adj=init_mlp(rng, d, d, d_adj, "refine.part_adj"),
        node_gcn=[
            Parameter(f"refine.node_gcn{i}", rng.normal(scale=0.02, size=(d, d)))
            for i in range(gcn_layers)
        ],
        part_gcn=[
            Parameter(f"refine.part_gcn{i}", rng.normal(scale=0.02, size=(d, d)))
            for i in range(gcn_layers)
        ],
        fusion_norm=NormParams(
            gain=Parameter("refine.fusion_norm.gain", np.ones((1, d))),
            bias=Parameter("refine.fusion_norm.bias", np.zeros((1, d))),
        ),
        head=init_mlp(rng, d, d, d_latent, "refine.head"),
        alpha=alpha,
    )


def mlp_forward(x: Tensor2, params: MlpParams, tape=None) -> Tensor2:
    h = ad.relu(ad.add_rowvec(ad.matmul(x, leaf_of(params.w1, tape)), leaf_of(params.b1, tape)))
    return ad.add_rowvec(ad.matmul(h, leaf_of(params.w2, tape)), leaf_of(params.b2, tape))


def predict_adjacency(q: Tensor2, predictor: MlpParams, tape=None) -> Tensor2:
    """sigmoid of the symmetrized Gram product of MLP features: n x n, entries
    in (0, 1), symmetric by construction; bounded so it can regress onto the
    [0, 1] pseudo-ground-truth targets."""
    r = mlp_forward(q, predictor, tape)
    gram = ad.matmul(r, ad.transpose(r))
    symmetric = ad.scale(ad.add(gram, ad.transpose(gram)), 0.5)
    return ad.sigmoid(symmetric)


def gcn_forward(q: Tensor2, adj: Tensor2, layers: list[Parameter], tape=None) -> Tensor2:
    """x <- relu(adj . x . W) per layer. No degree normalization: entries are
    already in (0, 1) and the unit diagonal of the targets supplies self-loops."""
    if adj.rows != q.rows or adj.cols != q.rows:
        raise ad.ShapeMismatch(f"adjacency {adj.shape} does not match {q.rows} rows")
    x = q
    for w in layers:
        x = ad.relu(ad.matmul(ad.matmul(adj, x), leaf_of(w, tape)))
    return x


def refiner_forward(
    q_tv: Tensor2,
    assign: PartAssignment,
    params: RefinerParams,
    tape=None,
) -> tuple[Tensor2, Tensor2, Tensor2]:
    """Returns (refined queries, predicted node adjacency, predicted part adjacency).

    fused = norm(alpha * node_path + (1 - alpha) * part_path + q_tv); at
    alpha extremes the unused path is multiplied by exactly 0.0, so the
    output is bit-independent of that path's parameters.
    """
    a_node = predict_adjacency(q_tv, params.node_adj, tape)
    q_node = gcn_forward(q_tv, a_node, params.node_gcn, tape)

    pooled = pool_by_parts(q_tv, assign)
    a_part = predict_adjacency(pooled, params.part_adj, tape)
    q_part = unpool(gcn_forward(pooled, a_part, params.part_gcn, tape), assign)

    fused = ad.add(
        ad.add(ad.scale(q_node, params.alpha), ad.scale(q_part, 1.0 - params.alpha)), q_tv
    )
    q_final = ad.layer_norm(
        fused, leaf_of(params.fusion_norm.gain, tape), leaf_of(params.fusion_norm.bias, tape)
    )
    return q_final, a_node, a_part


def latent_head(q_final: Tensor2, params: RefinerParams, tape=None) -> Tensor2:
    """Row-wise 2-layer MLP mapping refined queries to per-part latents."""
    return mlp_forward(q_final, params.head, tape)
