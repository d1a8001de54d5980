"""Optimization: the three-term loss, OneCycle schedule, Adam, and evaluation.

Per batch: the latent regression term is the mean absolute error between
predicted and ground-truth latents; the two adjacency terms are mean squared
errors between predicted and pseudo-ground-truth adjacency matrices at node
(1/N^2) and part (1/K^2) granularity. The total is their weighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adjacency import PartAssignment, hierarchical_cluster, part_pseudo_adjacency, pseudo_adjacency
from .autodiff import GradTape, NumericsError, Parameter, Tensor2
from .datagen import Sample
from .encoders import synth_text_embedding
from .mesh import extract_mesh
from .metrics import sampled_metrics
from .model import Pipeline, save_checkpoint

__all__ = [
    "LossWeights",
    "TrainConfig",
    "TrainingError",
    "PreparedSample",
    "prepare_samples",
    "forward_losses",
    "onecycle_lr",
    "Adam",
    "train",
    "evaluate",
]


class TrainingError(RuntimeError):
    """Aborted optimization, with step/batch diagnostics in the message."""


@dataclass(frozen=True)
class LossWeights:
    lambda_align: float = 1.0
    lambda_indiv: float = 0.1
    lambda_part: float = 0.1

    def __post_init__(self):
        if min(self.lambda_align, self.lambda_indiv, self.lambda_part) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 16
    peak_lr: float = 1e-4
    epochs: int = 100
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0  # epochs; 0 = only at the end

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 1 or self.peak_lr <= 0:
            raise ValueError("batch, epochs, peak_lr must be positive")


@dataclass(frozen=True)
class PreparedSample:
    """Training quadruple with pseudo-ground-truth targets precomputed."""

    raster: object
    text_tokens: np.ndarray | None
    z_target: np.ndarray
    adj_node: np.ndarray
    adj_part: np.ndarray
    assign: PartAssignment


def prepare_samples(samples: list[Sample], pipeline: Pipeline) -> list[PreparedSample]:
    cfg = pipeline.config
    out = []
    for s in samples:
        means = s.shape.means()
        a_node = pseudo_adjacency(means)
        assign = hierarchical_cluster(a_node, cfg.k_parts)
        a_part = part_pseudo_adjacency(means, assign)
        tokens = None
        if cfg.use_text:
            tokens = synth_text_embedding(s.desc, style=cfg.text_style, width=cfg.text_width).tokens
        out.append(
            PreparedSample(
                raster=s.raster,
                text_tokens=tokens,
                z_target=np.asarray(s.z, dtype=np.float64),
                adj_node=a_node,
                adj_part=a_part,
                assign=assign,
            )
        )
    return out


def _forward_one(pipeline: Pipeline, prep: PreparedSample, tape):
    text = None
    if prep.text_tokens is not None:
        emb = ad.matmul(ad.tensor(prep.text_tokens), ad.leaf_of(pipeline.text_proj, tape))
    else:
        emb = None
    from .decoder import EmbeddingBundle, decode
    from .encoders import encode_sketch
    from .refine import latent_head, refiner_forward

    bundle = EmbeddingBundle(visual=encode_sketch(prep.raster, pipeline.encoder, tape), text=emb)
    q_tv = decode(
        ad.leaf_of(pipeline.queries, tape),
        bundle,
        pipeline.blocks,
        tape,
        cross_attention=pipeline.config.cross_attention,
    )
    if pipeline.config.use_refine:
        q_final, a_node, a_part = refiner_forward(q_tv, prep.assign, pipeline.refiner, tape)
    else:
        q_final, a_node, a_part = q_tv, None, None
    z = latent_head(q_final, pipeline.refiner, tape)
    return z, a_node, a_part


def forward_losses(
    pipeline: Pipeline,
    batch: list[PreparedSample],
    weights: LossWeights,
    tape=None,
) -> dict[str, Tensor2]:
    """Batch-mean loss terms, accumulated in index order for determinism."""
    if not batch:
        raise ValueError("empty batch")
    inv = 1.0 / len(batch)
    align = indiv = part = None

    def acc(total, term):
        term = ad.scale(term, inv)
        return term if total is None else ad.add(total, term)

    for prep in batch:
        z, a_node, a_part = _forward_one(pipeline, prep, tape)
        align = acc(align, ad.l1(z, ad.tensor(prep.z_target)))
        if a_node is not None:
            indiv = acc(indiv, ad.mse(a_node, ad.tensor(prep.adj_node)))
            part = acc(part, ad.mse(a_part, ad.tensor(prep.adj_part)))
    zero = ad.tensor([[0.0]])
    indiv = indiv if indiv is not None else zero
    part = part if part is not None else zero
    total = ad.add(
        ad.add(ad.scale(align, weights.lambda_align), ad.scale(indiv, weights.lambda_indiv)),
        ad.scale(part, weights.lambda_part),
    )
    return {"align": align, "indiv": indiv, "part": part, "total": total}


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine warmup from peak/div_factor to peak, then cosine decay to
    peak/final_div. Continuous; equals peak exactly at the warmup boundary
    and the final value exactly at the last step."""
    if not (0 <= step < total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps})")
    peak = cfg.peak_lr
    start = peak / cfg.div_factor
    final = peak / cfg.final_div
    warm = max(1, int(round(cfg.warmup_frac * total_steps)))
    if total_steps == 1:
        return peak
    if step <= warm:
        t = step / warm
        return start + (peak - start) * 0.5 * (1.0 - math.cos(math.pi * t))
    t = (step - warm) / (total_steps - 1 - warm)
    return final + (peak - final) * 0.5 * (1.0 + math.cos(math.pi * t))


class Adam:
    """Adam with bias correction; one slot pair per parameter, fixed order."""

    def __init__(self, params: list[Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                raise TrainingError(f"parameter {p.name} has no gradient")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    pipeline: Pipeline,
    samples: list[Sample],
    cfg: TrainConfig,
    out_path=None,
    log_every: int = 0,
) -> list[dict]:
    """Optimize in place; returns per-step loss history. Shuffling is fixed
    per (seed, epoch); a non-finite loss aborts with diagnostics."""
    prepared = prepare_samples(samples, pipeline)
    params = pipeline.parameters()
    opt = Adam(params)
    batches_per_epoch = max(1, math.ceil(len(prepared) / cfg.batch))
    total_steps = cfg.epochs * batches_per_epoch
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(prepared))
        for b in range(batches_per_epoch):
            batch = [prepared[i] for i in order[b * cfg.batch : (b + 1) * cfg.batch]]
            if not batch:
                continue
            lr = onecycle_lr(step, total_steps, cfg)
            try:
                with GradTape() as tape:
                    losses = forward_losses(pipeline, batch, cfg.weights, tape)
                    record = {k: v.item() for k, v in losses.items()}
                    for p in params:  # params outside the active config get zero grads
                        tape.watch(p)
                    tape.backward(losses["total"])
            except NumericsError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(batch indices {order[b * cfg.batch:(b + 1) * cfg.batch].tolist()}): {exc}"
                ) from exc
            if not math.isfinite(record["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {record}")
            opt.step(lr)
            record.update(step=step, epoch=epoch, lr=lr)
            history.append(record)
            if log_every and step % log_every == 0:
                print(
                    f"step {step:5d} lr {lr:.2e} total {record['total']:.4f} "
                    f"align {record['align']:.4f} indiv {record['indiv']:.4f} part {record['part']:.4f}"
                )
            step += 1
        if out_path is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_path, pipeline)
    if out_path is not None:
        save_checkpoint(out_path, pipeline)
    return history


def evaluate(
    pipeline: Pipeline,
    samples: list[Sample],
    n_points: int = 2048,
    seed: int = 0,
    mesh_resolution: int = 32,
    with_fid: bool = False,
) -> dict:
    """Decode each test sketch, extract meshes, and report point metrics
    (plus the view-based Frechet score when requested)."""
    from .metrics import fid_lite

    per_sample = []
    for s in samples:
        shape_hat = pipeline.infer_shape(s.raster, s.desc)
        entry = {"index": s.index}
        try:
            entry.update(
                sampled_metrics(
                    shape_hat, s.shape, n=n_points, seed=seed, resolution=mesh_resolution
                )
            )
        except ValueError as exc:
            entry.update(cd=float("inf"), emd=float("inf"), error=str(exc))
        if with_fid and "error" not in entry:
            mesh_hat = extract_mesh(shape_hat, resolution=mesh_resolution)
            mesh_gt = extract_mesh(s.shape, resolution=mesh_resolution)
            entry["fid_lite"] = fid_lite(mesh_hat, mesh_gt)
        per_sample.append(entry)
    cds = [e["cd"] for e in per_sample]
    emds = [e["emd"] for e in per_sample]
    report = {
        "count": len(per_sample),
        "median_cd": float(np.median(cds)),
        "median_emd": float(np.median(emds)),
        "mean_cd": float(np.mean(cds)),
        "mean_emd": float(np.mean(emds)),
        "n_points": n_points,
        "seed": seed,
        "mesh_resolution": mesh_resolution,
        "samples": per_sample,
    }
    if with_fid:
        fids = [e["fid_lite"] for e in per_sample if "fid_lite" in e]
        report["median_fid_lite"] = float(np.median(fids)) if fids else None
    return report
