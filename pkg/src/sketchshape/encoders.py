"""Embedding providers: a trainable patch encoder for sketch rasters, a
deterministic codebook-based text provider, and a client for an external
embedding service speaking the flat-binary matrix format.
"""

from __future__ import annotations

import hashlib
import io
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import autodiff as ad
from .autodiff import Parameter, Tensor2, leaf_of
from .binio import MatrixFormatError, matrix_from_bytes

__all__ = [
    "KNOWN_CATEGORIES",
    "STYLES",
    "SketchRaster",
    "PartDescription",
    "GroupSpec",
    "TextEmbedding",
    "TextCodebook",
    "PatchEncoderParams",
    "init_patch_encoder",
    "patch_tokens",
    "encode_sketch",
    "synth_text_embedding",
    "EmbeddingServiceError",
    "EmbeddingDimensionError",
    "fetch_external_embedding",
]

KNOWN_CATEGORIES = ("chair", "airplane", "lamp")
STYLES = ("part-type", "single-sentence", "verbose")
PATCH = 8


@dataclass(frozen=True)
class SketchRaster:
    """Square grayscale raster in [0, 1], row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.clip(np.array(self.pixels, dtype=np.float64), 0.0, 1.0)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"raster must be square, got {px.shape}")

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def to_png_bytes(self) -> bytes:
        img = Image.fromarray(np.round(self.pixels * 255.0).astype(np.uint8), mode="L")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    @staticmethod
    def from_png_bytes(data: bytes) -> "SketchRaster":
        img = Image.open(io.BytesIO(data)).convert("L")
        return SketchRaster(np.asarray(img, dtype=np.float64) / 255.0)


@dataclass(frozen=True)
class GroupSpec:
    count: int
    shape: str


@dataclass(frozen=True)
class PartDescription:
    """Structured stand-in for a captioning model's output: category plus
    per-part-group counts and coarse shape codes."""

    category: str
    groups: dict[str, GroupSpec]

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "groups": {g: {"count": s.count, "shape": s.shape} for g, s in sorted(self.groups.items())},
        }

    @staticmethod
    def from_dict(d: dict) -> "PartDescription":
        groups = {g: GroupSpec(int(s["count"]), str(s["shape"])) for g, s in d["groups"].items()}
        return PartDescription(category=str(d["category"]), groups=groups)


@dataclass(frozen=True)
class TextEmbedding:
    tokens: np.ndarray
    provenance: str  # "synthetic" | "file" | "external-service"
    prompt: str | None = None

    def __post_init__(self):
        tok = np.array(self.tokens, dtype=np.float64)
        tok.setflags(write=False)
        object.__setattr__(self, "tokens", tok)
        if tok.ndim != 2 or tok.shape[0] < 1:
            raise ValueError(f"embedding must be (tokens >= 1) x width, got {tok.shape}")
        if not np.isfinite(tok).all():
            raise ValueError("embedding contains non-finite values")


@dataclass
class PatchEncoderParams:
    """Linear 8x8 patch embedding plus a residual 2-layer token-mixing MLP."""

    w_patch: Parameter
    b_patch: Parameter
    w_mix1: Parameter
    w_mix2: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w_patch, self.b_patch, self.w_mix1, self.w_mix2]


def init_patch_encoder(rng: np.random.Generator, side: int, d: int, prefix: str = "enc") -> PatchEncoderParams:
    if side % PATCH != 0:
        raise ValueError(f"raster side {side} not divisible by {PATCH}")
    t = (side // PATCH) ** 2
    return PatchEncoderParams(
        w_patch=Parameter(f"{prefix}.w_patch", rng.normal(scale=0.02, size=(PATCH * PATCH, d))),
        b_patch=Parameter(f"{prefix}.b_patch", rng.normal(scale=0.02, size=(1, d))),
        w_mix1=Parameter(f"{prefix}.w_mix1", rng.normal(scale=0.02, size=(t, t))),
        # residual mixing branch starts silent so fresh encoders emit pure patch tokens
        w_mix2=Parameter(f"{prefix}.w_mix2", np.zeros((t, t))),
    )


def _extract_patches(raster: SketchRaster) -> np.ndarray:
    side = raster.side
    if side % PATCH != 0:
        raise ValueError(f"raster side {side} not divisible by {PATCH}")
    g = side // PATCH
    px = raster.pixels.reshape(g, PATCH, g, PATCH)
    return px.transpose(0, 2, 1, 3).reshape(g * g, PATCH * PATCH)


def patch_tokens(raster: SketchRaster, params: PatchEncoderParams, tape=None) -> Tensor2:
    """Pre-mixing tokens: one linear embedding per 8x8 patch, row-major patch order."""
    patches = ad.tensor(_extract_patches(raster))
    return ad.add_rowvec(ad.matmul(patches, leaf_of(params.w_patch, tape)), leaf_of(params.b_patch, tape))


def encode_sketch(raster: SketchRaster, params: PatchEncoderParams, tape=None) -> Tensor2:
    """Visual tokens ((side/8)^2 x d): patch embedding refined by token mixing."""
    t0 = patch_tokens(raster, params, tape)
    mixed = ad.matmul(leaf_of(params.w_mix2, tape), ad.relu(ad.matmul(leaf_of(params.w_mix1, tape), t0)))
    return ad.add(t0, mixed)


def _stable_seed(*keys) -> list[int]:
    digest = hashlib.sha256("|".join(str(k) for k in keys).encode()).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class TextCodebook:
    """Deterministic seeded rows, one per structured key; rows checked distinct."""

    def __init__(self, width: int = 48, seed: int = 77):
        self.width = width
        self.seed = seed
        self._rows: dict[str, np.ndarray] = {}

    def row(self, key: str) -> np.ndarray:
        cached = self._rows.get(key)
        if cached is not None:
            return cached
        rng = np.random.default_rng(_stable_seed(self.seed, key))
        vec = rng.normal(size=self.width)
        for other_key, other in self._rows.items():
            if np.array_equal(other, vec):
                raise RuntimeError(f"codebook collision between {key!r} and {other_key!r}")
        self._rows[key] = vec
        return vec


_CODEBOOKS: dict[int, TextCodebook] = {}
_VERBOSE_DISTRACTORS = 3


def codebook_for_width(width: int = 48) -> TextCodebook:
    """Shared deterministic codebook per embedding width."""
    cb = _CODEBOOKS.get(width)
    if cb is None:
        cb = TextCodebook(width=width)
        _CODEBOOKS[width] = cb
    return cb


def synth_text_embedding(
    desc: PartDescription,
    style: str = "single-sentence",
    codebook: TextCodebook | None = None,
    width: int = 48,
) -> TextEmbedding:
    """Deterministic structured embedding standing in for a captioner.

    single-sentence: category token plus one token per (group, count, shape)
    triple. part-type: drops counts and shapes, keeps only present groups.
    verbose: single-sentence plus seeded distractor tokens emulating
    hallucinated modifiers.
    """
    if desc.category not in KNOWN_CATEGORIES:
        raise ValueError(f"unknown category {desc.category!r}; known: {KNOWN_CATEGORIES}")
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; known: {STYLES}")
    cb = codebook if codebook is not None else codebook_for_width(width)
    rows = [cb.row(f"cat:{desc.category}")]
    for group in sorted(desc.groups):
        spec = desc.groups[group]
        if style == "part-type":
            if spec.count > 0:
                rows.append(cb.row(f"grp:{desc.category}:{group}"))
        else:
            rows.append(cb.row(f"grp:{desc.category}:{group}:{spec.count}:{spec.shape}"))
    if style == "verbose":
        fingerprint = _stable_seed("verbose", desc.category, sorted(desc.groups.items()))[0]
        for i in range(_VERBOSE_DISTRACTORS):
            rows.append(cb.row(f"noise:{fingerprint}:{i}"))
    return TextEmbedding(tokens=np.stack(rows), provenance="synthetic", prompt=style)


class EmbeddingServiceError(RuntimeError):
    """External embedding service unreachable or returned garbage."""


class EmbeddingDimensionError(EmbeddingServiceError):
    """Service returned an embedding whose width does not match the model."""


def fetch_external_embedding(
    img: SketchRaster,
    prompt: str,
    endpoint: str,
    expected_cols: int | None = None,
    timeout: float = 10.0,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep=time.sleep,
    post=None,
) -> TextEmbedding:
    """POST the sketch and prompt to `endpoint`, expect a flat-binary matrix back.

    Retries up to `attempts` times with exponential backoff. A response of
    the wrong width is rejected, never silently projected.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if post is None:
        import requests

        def post(url, png, text, timeout):  # pragma: no cover - thin network shim
            resp = requests.post(
                url,
                files={"image": ("sketch.png", png, "image/png")},
                data={"prompt": text},
                timeout=timeout,
            )
            resp.raise_for_status()
            return resp.content

    png = img.to_png_bytes()
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            payload = post(endpoint, png, prompt, timeout)
            break
        except Exception as exc:  # noqa: BLE001 - network layer raises many types
            last_error = exc
            if attempt + 1 < attempts:
                sleep(backoff * (2.0**attempt))
    else:
        raise EmbeddingServiceError(
            f"embedding service failed after {attempts} attempts: {last_error}"
        ) from last_error

    try:
        matrix = matrix_from_bytes(payload)
    except MatrixFormatError as exc:
        raise EmbeddingServiceError(f"malformed embedding payload: {exc}") from exc
    if expected_cols is not None and matrix.shape[1] != expected_cols:
        raise EmbeddingDimensionError(
            f"service returned width {matrix.shape[1]}, model expects {expected_cols}"
        )
    return TextEmbedding(tokens=matrix, provenance="external-service", prompt=prompt)
