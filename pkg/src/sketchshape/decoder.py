"""Learnable-query decoder over visual and text tokens.

Each block runs: query self-attention, visual cross-attention, an inner
self-attention + feed-forward pair, text cross-attention, and a final
feed-forward, every sub-layer wrapped as norm(x + sublayer(x)). Blocks are
stacked `depth` times. Cross-attention reads token sets without positional
encoding, so token order never matters.

Residual wrapping supports norm_mode "post" (default) and "none"; with
"none" and all sub-layer weights zero the decoder is exactly the identity.
A pre-norm variant would move the norm inside the residual branch; only
post-norm is implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor2, leaf_of

__all__ = [
    "AttentionParams",
    "FeedForwardParams",
    "NormParams",
    "DecoderBlock",
    "EmbeddingBundle",
    "init_queries",
    "init_decoder_blocks",
    "attention",
    "decoder_block",
    "decode",
]


@dataclass
class AttentionParams:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter

    def parameters(self):
        return [self.wq, self.wk, self.wv, self.wo]


@dataclass
class FeedForwardParams:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class NormParams:
    gain: Parameter
    bias: Parameter

    def parameters(self):
        return [self.gain, self.bias]


@dataclass
class DecoderBlock:
    """Parameters for one block; `text_attn` is None when the text path is disabled."""

    self_attn: AttentionParams
    self_attn_norm: NormParams
    visual_attn: AttentionParams
    visual_attn_norm: NormParams
    inner_attn: AttentionParams
    inner_attn_norm: NormParams
    inner_ff: FeedForwardParams
    inner_ff_norm: NormParams
    text_attn: AttentionParams | None
    text_attn_norm: NormParams | None
    final_ff: FeedForwardParams
    final_ff_norm: NormParams

    def parameters(self):
        groups = [
            self.self_attn, self.self_attn_norm,
            self.visual_attn, self.visual_attn_norm,
            self.inner_attn, self.inner_attn_norm,
            self.inner_ff, self.inner_ff_norm,
            self.final_ff, self.final_ff_norm,
        ]
        if self.text_attn is not None:
            groups += [self.text_attn, self.text_attn_norm]
        out = []
        for g in groups:
            out.extend(g.parameters())
        return out


@dataclass(frozen=True)
class EmbeddingBundle:
    """Token sets the queries attend to; both already projected to width d."""

    visual: Tensor2
    text: Tensor2 | None

    def __post_init__(self):
        if self.visual.rows < 1:
            raise ValueError("visual embedding needs at least one token")
        if self.text is not None:
            if self.text.rows < 1:
                raise ValueError("text embedding needs at least one token")
            if self.text.cols != self.visual.cols:
                raise ValueError(
                    f"token widths differ: visual {self.visual.cols}, text {self.text.cols}"
                )


def _init_attention(rng, d, prefix) -> AttentionParams:
    def mat(name):
        return Parameter(f"{prefix}.{name}", rng.normal(scale=0.02, size=(d, d)))

    return AttentionParams(mat("wq"), mat("wk"), mat("wv"), mat("wo"))


def _init_ff(rng, d, prefix) -> FeedForwardParams:
    hidden = 4 * d
    return FeedForwardParams(
        w1=Parameter(f"{prefix}.w1", rng.normal(scale=0.02, size=(d, hidden))),
        b1=Parameter(f"{prefix}.b1", np.zeros((1, hidden))),
        w2=Parameter(f"{prefix}.w2", rng.normal(scale=0.02, size=(hidden, d))),
        b2=Parameter(f"{prefix}.b2", np.zeros((1, d))),
    )


def _init_norm(d, prefix) -> NormParams:
    return NormParams(
        gain=Parameter(f"{prefix}.gain", np.ones((1, d))),
        bias=Parameter(f"{prefix}.bias", np.zeros((1, d))),
    )


def init_queries(rng: np.random.Generator, n: int, d: int) -> Parameter:
    return Parameter("queries", rng.normal(scale=0.02, size=(n, d)))


def init_decoder_blocks(
    rng: np.random.Generator, depth: int, d: int, use_text: bool = True
) -> list[DecoderBlock]:
    blocks = []
    for i in range(depth):
        p = f"block{i}"
        blocks.append(
            DecoderBlock(
                self_attn=_init_attention(rng, d, f"{p}.self"),
                self_attn_norm=_init_norm(d, f"{p}.self_norm"),
                visual_attn=_init_attention(rng, d, f"{p}.visual"),
                visual_attn_norm=_init_norm(d, f"{p}.visual_norm"),
                inner_attn=_init_attention(rng, d, f"{p}.inner"),
                inner_attn_norm=_init_norm(d, f"{p}.inner_norm"),
                inner_ff=_init_ff(rng, d, f"{p}.inner_ff"),
                inner_ff_norm=_init_norm(d, f"{p}.inner_ff_norm"),
                text_attn=_init_attention(rng, d, f"{p}.text") if use_text else None,
                text_attn_norm=_init_norm(d, f"{p}.text_norm") if use_text else None,
                final_ff=_init_ff(rng, d, f"{p}.final_ff"),
                final_ff_norm=_init_norm(d, f"{p}.final_ff_norm"),
            )
        )
    return blocks


def attention(q_in: Tensor2, kv_in: Tensor2, params: AttentionParams, tape=None) -> Tensor2:
    """Single-head scaled dot-product attention with output projection."""
    d = q_in.cols
    q = ad.matmul(q_in, leaf_of(params.wq, tape))
    k = ad.matmul(kv_in, leaf_of(params.wk, tape))
    v = ad.matmul(kv_in, leaf_of(params.wv, tape))
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d))
    weights = ad.softmax_rows(logits)
    return ad.matmul(ad.matmul(weights, v), leaf_of(params.wo, tape))


def _feed_forward(x: Tensor2, params: FeedForwardParams, tape=None) -> Tensor2:
    h = ad.relu(ad.add_rowvec(ad.matmul(x, leaf_of(params.w1, tape)), leaf_of(params.b1, tape)))
    return ad.add_rowvec(ad.matmul(h, leaf_of(params.w2, tape)), leaf_of(params.b2, tape))


def _wrap(x: Tensor2, sub_out: Tensor2, norm: NormParams, tape, norm_mode: str) -> Tensor2:
    summed = ad.add(x, sub_out)
    if norm_mode == "none":
        return summed
    if norm_mode == "post":
        return ad.layer_norm(summed, leaf_of(norm.gain, tape), leaf_of(norm.bias, tape))
    raise ValueError(f"unknown norm_mode {norm_mode!r}")


def decoder_block(
    q: Tensor2,
    emb: EmbeddingBundle,
    block: DecoderBlock,
    tape=None,
    norm_mode: str = "post",
    cross_attention: str = "sequential",
) -> Tensor2:
    """One block. `cross_attention` is "sequential" (visual then text) or
    "parallel" (both read the same queries, contributions summed)."""
    use_text = block.text_attn is not None and emb.text is not None
    x = _wrap(q, attention(q, q, block.self_attn, tape), block.self_attn_norm, tape, norm_mode)
    if cross_attention == "sequential":
        x = _wrap(x, attention(x, emb.visual, block.visual_attn, tape), block.visual_attn_norm, tape, norm_mode)
        x = _wrap(x, attention(x, x, block.inner_attn, tape), block.inner_attn_norm, tape, norm_mode)
        x = _wrap(x, _feed_forward(x, block.inner_ff, tape), block.inner_ff_norm, tape, norm_mode)
        if use_text:
            x = _wrap(x, attention(x, emb.text, block.text_attn, tape), block.text_attn_norm, tape, norm_mode)
    elif cross_attention == "parallel":
        both = attention(x, emb.visual, block.visual_attn, tape)
        if use_text:
            both = ad.add(both, attention(x, emb.text, block.text_attn, tape))
        x = _wrap(x, both, block.visual_attn_norm, tape, norm_mode)
        x = _wrap(x, attention(x, x, block.inner_attn, tape), block.inner_attn_norm, tape, norm_mode)
        x = _wrap(x, _feed_forward(x, block.inner_ff, tape), block.inner_ff_norm, tape, norm_mode)
    else:
        raise ValueError(f"unknown cross_attention {cross_attention!r}")
    return _wrap(x, _feed_forward(x, block.final_ff, tape), block.final_ff_norm, tape, norm_mode)


def decode(
    queries: Tensor2,
    emb: EmbeddingBundle,
    blocks: list[DecoderBlock],
    tape=None,
    norm_mode: str = "post",
    cross_attention: str = "sequential",
) -> Tensor2:
    if not blocks:
        raise ValueError("need at least one decoder block")
    x = queries
    for block in blocks:
        x = decoder_block(x, emb, block, tape, norm_mode, cross_attention)
    return x
