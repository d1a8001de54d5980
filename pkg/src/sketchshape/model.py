"""End-to-end pipeline: sketch + description -> per-part latent vectors.

Owns every trainable parameter (learnable queries, patch encoder, text
projection, decoder blocks, graph refiner, latent head) plus the category
template assignment used to pool parts at inference time, when no
ground-truth part centers exist.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adjacency import PartAssignment, hierarchical_cluster, pseudo_adjacency
from .autodiff import Parameter, Tensor2, leaf_of
from .binio import matrix_from_bytes, matrix_to_bytes
from .datagen import TEMPLATES, LatentCodec, sample_shape
from .decoder import DecoderBlock, EmbeddingBundle, decode, init_decoder_blocks, init_queries
from .encoders import (
    PartDescription,
    PatchEncoderParams,
    SketchRaster,
    TextEmbedding,
    encode_sketch,
    init_patch_encoder,
    synth_text_embedding,
)
from .refine import RefinerParams, init_refiner, latent_head, refiner_forward

__all__ = ["ModelConfig", "Pipeline", "save_checkpoint", "load_checkpoint", "checkpoint_hash"]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    category: str = "chair"
    n_parts: int = 16
    d: int = 64
    depth: int = 2
    d_adj: int = 32
    d_latent: int = 32
    k_parts: int = 4
    alpha: float = 0.8
    raster_side: int = 64
    text_width: int = 48
    use_text: bool = True
    use_refine: bool = True
    cross_attention: str = "sequential"
    text_style: str = "single-sentence"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def template_assignment(category: str, k: int, n_seeds: int = 8) -> PartAssignment:
    """Category-level part grouping: cluster slot centers averaged over a few
    canonical samples, so inference needs no ground truth."""
    template = TEMPLATES[category]
    means = np.mean(
        [sample_shape(template, seed)[0].means() for seed in range(n_seeds)], axis=0
    )
    return hierarchical_cluster(pseudo_adjacency(means), k)


class Pipeline:
    def __init__(self, config: ModelConfig, assignment: PartAssignment | None = None):
        rng = np.random.default_rng([config.seed])
        self.config = config
        self.queries = init_queries(rng, config.n_parts, config.d)
        self.encoder = init_patch_encoder(rng, config.raster_side, config.d)
        self.text_proj = Parameter("text_proj", rng.normal(scale=0.02, size=(config.text_width, config.d)))
        self.blocks: list[DecoderBlock] = init_decoder_blocks(
            rng, config.depth, config.d, use_text=config.use_text
        )
        self.refiner: RefinerParams = init_refiner(
            rng,
            d=config.d,
            d_adj=config.d_adj,
            d_latent=config.d_latent,
            alpha=config.alpha,
        )
        self.codec = LatentCodec(d_latent=config.d_latent)
        self.assignment = (
            assignment
            if assignment is not None
            else template_assignment(config.category, config.k_parts)
        )

    def parameters(self) -> list[Parameter]:
        params = [self.queries] + self.encoder.parameters() + [self.text_proj]
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend(self.refiner.parameters())
        return params

    def embed_text(self, text: PartDescription | TextEmbedding | None, tape=None) -> Tensor2 | None:
        if not self.config.use_text or text is None:
            return None
        if isinstance(text, PartDescription):
            text = synth_text_embedding(text, style=self.config.text_style, width=self.config.text_width)
        if text.tokens.shape[1] != self.config.text_width:
            raise ValueError(
                f"text width {text.tokens.shape[1]} does not match model {self.config.text_width}"
            )
        return ad.matmul(ad.tensor(text.tokens), leaf_of(self.text_proj, tape))

    def forward_latents(
        self,
        raster: SketchRaster,
        text: PartDescription | TextEmbedding | None,
        assign: PartAssignment | None = None,
        tape=None,
    ) -> tuple[Tensor2, Tensor2 | None, Tensor2 | None]:
        """Returns (latents, predicted node adjacency, predicted part adjacency)."""
        if raster.side != self.config.raster_side:
            raise ValueError(f"raster side {raster.side} != model {self.config.raster_side}")
        assign = assign if assign is not None else self.assignment
        emb = EmbeddingBundle(
            visual=encode_sketch(raster, self.encoder, tape),
            text=self.embed_text(text, tape),
        )
        q_tv = decode(
            leaf_of(self.queries, tape),
            emb,
            self.blocks,
            tape,
            cross_attention=self.config.cross_attention,
        )
        if self.config.use_refine:
            q_final, a_node, a_part = refiner_forward(q_tv, assign, self.refiner, tape)
        else:
            q_final, a_node, a_part = q_tv, None, None
        z = latent_head(q_final, self.refiner, tape)
        return z, a_node, a_part

    def infer_shape(self, raster: SketchRaster, text: PartDescription | TextEmbedding | None):
        """Inference convenience: decoded ShapeGMM for one sketch."""
        z, _, _ = self.forward_latents(raster, text)
        return self.codec.decode(z.data)


def save_checkpoint(path: str | Path, pipeline: Pipeline) -> str:
    """Versioned container: JSON header + named parameter blobs. Returns the
    sha256 content hash."""
    params = pipeline.parameters()
    header = {
        "version": CHECKPOINT_VERSION,
        "config": pipeline.config.to_dict(),
        "assignment": {
            "n": pipeline.assignment.n,
            "k": pipeline.assignment.k,
            "labels": list(pipeline.assignment.labels),
        },
        "params": [p.name for p in params],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for p in params:
        blob += matrix_to_bytes(p.value)
    data = bytes(blob)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def checkpoint_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_checkpoint(path: str | Path) -> tuple[Pipeline, str]:
    """Rebuild a pipeline from a checkpoint; returns (pipeline, content hash)."""
    data = Path(path).read_bytes()
    (header_len,) = struct.unpack_from("<I", data)
    header = json.loads(data[4 : 4 + header_len].decode())
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    config = ModelConfig.from_dict(header["config"])
    assignment = PartAssignment(
        n=header["assignment"]["n"],
        k=header["assignment"]["k"],
        labels=tuple(header["assignment"]["labels"]),
    )
    pipeline = Pipeline(config, assignment=assignment)
    params = pipeline.parameters()
    names = [p.name for p in params]
    if names != header["params"]:
        raise ValueError("checkpoint parameter list does not match model structure")
    offset = 4 + header_len
    for p in params:
        rows, cols = p.value.shape
        size = 16 + rows * cols * 4
        p.value = matrix_from_bytes(data[offset : offset + size])
        offset += size
    if offset != len(data):
        raise ValueError(f"checkpoint has {len(data) - offset} trailing bytes")
    return pipeline, hashlib.sha256(data).hexdigest()
