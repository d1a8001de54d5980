"""Procedural training data: shapes, sketches, descriptions, and latents.

Shapes come from per-category templates with 16 part slots grouped into
semantic part groups. The latent codec is linear and invertible by design:
each part packs into a 10-vector (center, rotation-vector, log radii,
compressed weight logit) and maps through a fixed orthonormal basis, so the
ground-truth latents used for training decode back to the source shape
exactly and a zero regression loss is actually attainable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .binio import matrix_from_bytes, matrix_to_bytes
from .encoders import GroupSpec, PartDescription, SketchRaster
from .gmm import MU_BOUND, GaussianPart, ShapeGMM, occupancy, shape_from_json, shape_to_json

__all__ = [
    "N_SLOTS",
    "THETA_DIM",
    "VIEWS",
    "ShapeTemplate",
    "TEMPLATES",
    "LatentCodec",
    "sample_shape",
    "render_sketch",
    "Sample",
    "write_dataset",
    "load_dataset",
]

N_SLOTS = 16
THETA_DIM = 10
VIEWS = ("front", "side", "three-quarter")

# Weight logits are compressed so the empty-slot target (weight ~ 0) stays a
# few units in magnitude instead of ~30, keeping regression targets bounded.
WEIGHT_LOGIT_SCALE = 8.0
WEIGHT_EPS = 1e-13
LOG_SCALE_MIN = np.log(1e-4)
LOG_SCALE_MAX = np.log(4.0)
SCALE_RANGE = (0.02, 0.75)  # all sampled radii fall inside this range


@dataclass(frozen=True)
class ShapeTemplate:
    """Which of the 16 slots belong to which part group, per category."""

    category: str
    slots: dict[str, tuple[int, ...]]

    def __post_init__(self):
        flat = [i for group in self.slots.values() for i in group]
        if sorted(flat) != list(range(N_SLOTS)):
            raise ValueError(f"{self.category}: slots must partition 0..{N_SLOTS - 1}")

    def group_of(self, slot: int) -> str:
        for group, members in self.slots.items():
            if slot in members:
                return group
        raise KeyError(slot)


TEMPLATES = {
    "chair": ShapeTemplate(
        "chair",
        {
            "legs": (0, 1, 2, 3, 4, 5),
            "seat": (6, 7, 8),
            "backrest": (9, 10, 11, 12),
            "armrests": (13, 14, 15),
        },
    ),
    "airplane": ShapeTemplate(
        "airplane",
        {
            "wings": (0, 1, 2, 3),
            "fuselage": (4, 5, 6, 7, 8),
            "tail": (9, 10, 11),
            "engines": (12, 13, 14, 15),
        },
    ),
    "lamp": ShapeTemplate(
        "lamp",
        {
            "head": (0, 1, 2, 3, 4),
            "stem": (5, 6, 7, 8, 9, 10),
            "base": (11, 12, 13, 14, 15),
        },
    ),
}


class LatentCodec:
    """Exactly invertible map between Gaussian parts and latent vectors."""

    def __init__(self, d_latent: int = 32, seed: int = 2024):
        if d_latent < THETA_DIM:
            raise ValueError(f"d_latent must be >= {THETA_DIM}")
        rng = np.random.default_rng([seed, d_latent])
        m = rng.normal(size=(d_latent, THETA_DIM))
        q, r = np.linalg.qr(m)
        # fix QR sign ambiguity for reproducibility across runs
        self.basis = q * np.sign(np.diag(r))
        self.d_latent = d_latent

    def pack_part(self, part: GaussianPart) -> np.ndarray:
        w = np.clip(part.weight, WEIGHT_EPS, 1.0 - WEIGHT_EPS)
        theta = np.empty(THETA_DIM)
        theta[0:3] = part.mu
        theta[3:6] = Rotation.from_matrix(part.axes).as_rotvec()
        theta[6:9] = np.log(part.scales)
        theta[9] = np.log(w / (1.0 - w)) / WEIGHT_LOGIT_SCALE
        return theta

    def unpack_part(self, theta: np.ndarray) -> GaussianPart:
        mu = np.clip(theta[0:3], -MU_BOUND, MU_BOUND)
        axes = Rotation.from_rotvec(theta[3:6]).as_matrix()
        scales = np.exp(np.clip(theta[6:9], LOG_SCALE_MIN, LOG_SCALE_MAX))
        weight = 1.0 / (1.0 + np.exp(-WEIGHT_LOGIT_SCALE * theta[9]))
        return GaussianPart(mu=mu, axes=axes, scales=scales, weight=weight)

    def encode(self, shape: ShapeGMM) -> np.ndarray:
        thetas = np.stack([self.pack_part(p) for p in shape.parts])
        return thetas @ self.basis.T

    def decode(self, z: np.ndarray) -> ShapeGMM:
        z = np.asarray(z, dtype=np.float64)
        thetas = z @ self.basis
        parts = tuple(self.unpack_part(t) for t in thetas)
        return ShapeGMM(parts=parts, latents=z)


def _small_rotation(rng: np.random.Generator, spread: float = 0.06) -> np.ndarray:
    return Rotation.from_rotvec(rng.normal(scale=spread, size=3)).as_matrix()


def _parked(anchor) -> GaussianPart:
    """Unused slot: weight 0, parked at its group's anchor so distance-based
    clustering still sees coherent groups."""
    return GaussianPart(np.asarray(anchor, dtype=np.float64), np.eye(3), np.full(3, 0.05), 0.0)


def _sample_chair(rng: np.random.Generator):
    # Group geometry keeps within-group pairwise distances well below any
    # cross-group distance so average-linkage at K=4 recovers the four
    # part groups; unused slots are parked at group anchors with weight 0.
    parts: list[GaussianPart | None] = [None] * N_SLOTS
    jitter = lambda s=0.015: rng.normal(scale=s, size=3)

    n_legs = int(rng.integers(3, 6))
    leg_style = str(rng.choice(["straight", "splayed"]))
    half = rng.uniform(0.16, 0.2)
    leg_z = -0.7
    if n_legs == 3:
        angles = np.deg2rad([90.0, 210.0, 330.0])
        anchors = [(half * np.cos(a), half * np.sin(a)) for a in angles]
    elif n_legs == 4:
        anchors = [(half, half), (-half, half), (-half, -half), (half, -half)]
    else:
        # 5 legs: corner posts plus a center column
        anchors = [(half, half), (-half, half), (-half, -half), (half, -half), (0.0, 0.0)]
    tilt = 0.1 if leg_style == "splayed" else 0.0
    for i, (x, y) in enumerate(anchors):
        axes = Rotation.from_rotvec([tilt * np.sign(y), -tilt * np.sign(x), 0.0]).as_matrix()
        mu = np.array([x, y, leg_z]) + jitter()
        parts[i] = GaussianPart(mu, axes, np.array([0.05, 0.05, 0.24]) * rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.0))

    seat_shape = str(rng.choice(["square", "round"]))
    seat_z = rng.uniform(-0.02, 0.04)
    seat_scale = np.array([0.15, 0.28, 0.05]) if seat_shape == "square" else np.array([0.19, 0.22, 0.05])
    for j, x_off in enumerate((-0.22, 0.0, 0.22)):
        mu = np.array([x_off, 0.0, seat_z]) + jitter()
        parts[6 + j] = GaussianPart(mu, _small_rotation(rng, 0.03), seat_scale * rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.0))

    back_style = str(rng.choice(["straight", "curved"]))
    back_y = -0.35
    heights = np.linspace(0.25, 0.8, 4)
    for j, z in enumerate(heights):
        curve = 0.06 * (j / 3.0) ** 2 if back_style == "curved" else 0.0
        mu = np.array([0.0, back_y - curve, z]) + jitter()
        parts[9 + j] = GaussianPart(mu, _small_rotation(rng, 0.03), np.array([0.24, 0.05, 0.1]) * rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.0))

    # armrest slots sit at nominal rail positions whether or not arms exist;
    # absent arms just carry weight 0 there
    has_arms = bool(rng.random() < 0.5)
    arm_z = 0.45
    rail_positions = (np.array([0.3, -0.05, arm_z]), np.array([-0.3, -0.05, arm_z]))
    for j, pos in enumerate(rail_positions):
        mu = pos + jitter()
        if has_arms:
            parts[13 + j] = GaussianPart(mu, _small_rotation(rng, 0.03), np.array([0.04, 0.18, 0.04]) * rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.0))
        else:
            parts[13 + j] = _parked(mu)
    parts[15] = _parked(np.array([0.0, -0.05, arm_z]) + jitter())  # bridge slot

    leg_anchor = np.array([0.0, 0.0, leg_z])
    for slot in TEMPLATES["chair"].slots["legs"]:
        if parts[slot] is None:
            parts[slot] = _parked(leg_anchor + jitter(0.01))

    desc = PartDescription(
        category="chair",
        groups={
            "legs": GroupSpec(n_legs, leg_style),
            "seat": GroupSpec(1, seat_shape),
            "backrest": GroupSpec(1, back_style),
            "armrests": GroupSpec(2 if has_arms else 0, "rails" if has_arms else "none"),
        },
    )
    return parts, desc


def _sample_airplane(rng: np.random.Generator):
    parts: list[GaussianPart | None] = [None] * N_SLOTS
    jitter = lambda s=0.015: rng.normal(scale=s, size=3)

    wing_style = str(rng.choice(["straight", "swept"]))
    sweep = 0.18 if wing_style == "swept" else 0.0
    span = rng.uniform(0.55, 0.7)
    for j, x in enumerate((span, span * 0.5, -span * 0.5, -span)):
        mu = np.array([x, -sweep * abs(x) / span, 0.0]) + jitter()
        parts[j] = GaussianPart(mu, _small_rotation(rng, 0.02), np.array([0.18, 0.1, 0.025]) * rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.0))

    body_len = rng.uniform(0.6, 0.75)
    nose_shape = str(rng.choice(["slim", "wide"]))
    body_r = 0.07 if nose_shape == "slim" else 0.1
    for j, y in enumerate(np.linspace(body_len, -body_len, 5)):
        mu = np.array([0.0, y, 0.0]) + jitter()
        parts[4 + j] = GaussianPart(mu, _small_rotation(rng, 0.02), np.array([body_r, 0.2, body_r]) * rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.0))

    tail_style = str(rng.choice(["single", "t-tail"]))
    tail_y = -(body_len + 0.1)
    parts[9] = GaussianPart(np.array([0.0, tail_y, 0.12]) + jitter(), _small_rotation(rng, 0.02), np.array([0.025, 0.08, 0.12]), rng.uniform(0.85, 1.0))
    z_fins = 0.16 if tail_style == "t-tail" else 0.02
    for j, x in enumerate((0.16, -0.16)):
        parts[10 + j] = GaussianPart(np.array([x, tail_y, z_fins]) + jitter(), _small_rotation(rng, 0.02), np.array([0.1, 0.05, 0.025]), rng.uniform(0.85, 1.0))

    n_engines = int(rng.choice([2, 4]))
    eng_x = (0.3, -0.3) if n_engines == 2 else (0.3, -0.3, 0.55, -0.55)
    for j, x in enumerate(eng_x):
        parts[12 + j] = GaussianPart(np.array([x, 0.08, -0.07]) + jitter(), _small_rotation(rng, 0.02), np.array([0.035, 0.09, 0.035]), rng.uniform(0.85, 1.0))

    anchors = {
        "wings": np.array([0.0, -sweep / 2.0, 0.0]),
        "fuselage": np.array([0.0, 0.0, 0.0]),
        "tail": np.array([0.0, tail_y, z_fins]),
        "engines": np.array([0.0, 0.08, -0.07]),
    }
    template = TEMPLATES["airplane"]
    for slot in range(N_SLOTS):
        if parts[slot] is None:
            parts[slot] = _parked(anchors[template.group_of(slot)] + jitter(0.01))

    desc = PartDescription(
        category="airplane",
        groups={
            "wings": GroupSpec(2, wing_style),
            "fuselage": GroupSpec(1, nose_shape),
            "tail": GroupSpec(1, tail_style),
            "engines": GroupSpec(n_engines, "pods"),
        },
    )
    return parts, desc


def _sample_lamp(rng: np.random.Generator):
    parts: list[GaussianPart | None] = [None] * N_SLOTS
    jitter = lambda s=0.012: rng.normal(scale=s, size=3)

    head_shape = str(rng.choice(["dome", "cone"]))
    head_z = rng.uniform(0.55, 0.68)
    head_scale = np.array([0.2, 0.2, 0.1]) if head_shape == "dome" else np.array([0.16, 0.16, 0.16])
    parts[0] = GaussianPart(np.array([0.0, 0.0, head_z]) + jitter(), _small_rotation(rng, 0.02), head_scale, rng.uniform(0.85, 1.0))
    for j, a in enumerate(np.deg2rad([0.0, 90.0, 180.0, 270.0])):
        mu = np.array([0.14 * np.cos(a), 0.14 * np.sin(a), head_z - 0.08]) + jitter()
        parts[1 + j] = GaussianPart(mu, _small_rotation(rng, 0.02), np.array([0.06, 0.06, 0.05]), rng.uniform(0.85, 1.0))

    stem_style = str(rng.choice(["straight", "arc"]))
    bow = 0.12 if stem_style == "arc" else 0.0
    for j, z in enumerate(np.linspace(0.4, -0.45, 6)):
        t = j / 5.0
        mu = np.array([bow * np.sin(np.pi * t), 0.0, z]) + jitter()
        parts[5 + j] = GaussianPart(mu, _small_rotation(rng, 0.02), np.array([0.035, 0.035, 0.12]), rng.uniform(0.85, 1.0))

    base_shape = str(rng.choice(["disc", "block"]))
    base_z = -0.62
    base_scale = np.array([0.22, 0.22, 0.035]) if base_shape == "disc" else np.array([0.18, 0.18, 0.06])
    parts[11] = GaussianPart(np.array([0.0, 0.0, base_z]) + jitter(), _small_rotation(rng, 0.02), base_scale, rng.uniform(0.85, 1.0))
    for j, a in enumerate(np.deg2rad([45.0, 135.0, 225.0, 315.0])):
        mu = np.array([0.16 * np.cos(a), 0.16 * np.sin(a), base_z]) + jitter()
        parts[12 + j] = GaussianPart(mu, _small_rotation(rng, 0.02), np.array([0.07, 0.07, 0.03]), rng.uniform(0.85, 1.0))

    # lamp uses all 16 slots; no parking needed

    desc = PartDescription(
        category="lamp",
        groups={
            "head": GroupSpec(1, head_shape),
            "stem": GroupSpec(1, stem_style),
            "base": GroupSpec(1, base_shape),
        },
    )
    return parts, desc


_SAMPLERS = {"chair": _sample_chair, "airplane": _sample_airplane, "lamp": _sample_lamp}


def sample_shape(template: ShapeTemplate, seed: int, codec: LatentCodec | None = None):
    """Randomized structurally valid shape plus its matching description.

    Deterministic given (template, seed). Slots a category leaves unused
    carry weight exactly 0. Latents are the codec encoding of the shape.
    """
    rng = np.random.default_rng([seed])
    parts, desc = _SAMPLERS[template.category](rng)
    parts = [p if p is not None else _inactive_part() for p in parts]
    codec = codec if codec is not None else _default_codec()
    shell = ShapeGMM(parts=tuple(parts), latents=np.zeros((N_SLOTS, codec.d_latent)))
    return ShapeGMM(parts=tuple(parts), latents=codec.encode(shell)), desc


_CODEC_CACHE: dict[int, LatentCodec] = {}


def _default_codec(d_latent: int = 32) -> LatentCodec:
    codec = _CODEC_CACHE.get(d_latent)
    if codec is None:
        codec = LatentCodec(d_latent=d_latent)
        _CODEC_CACHE[d_latent] = codec
    return codec


_VIEW_ROTATIONS = {
    "front": Rotation.identity(),
    "side": Rotation.from_euler("z", 90, degrees=True),
    "three-quarter": Rotation.from_euler("z", 45, degrees=True),
}


def render_sketch(
    shape: ShapeGMM,
    view: str = "front",
    seed: int = 0,
    side: int = 64,
    jitter_px: float = 1.0,
    depth_samples: int = 48,
) -> SketchRaster:
    """Orthographic silhouette edge map with seeded hand-drawn-style jitter.

    The camera looks along +y after rotating the shape per `view`; image rows
    run top (+z) to bottom. Ink pixels are 1.0 on a 0.0 background. With
    jitter_px = 0 the raster is the exact one-pixel silhouette boundary.
    """
    if view not in _VIEW_ROTATIONS:
        raise ValueError(f"unknown view {view!r}; known: {sorted(_VIEW_ROTATIONS)}")
    rot = _VIEW_ROTATIONS[view].as_matrix()
    lin = np.linspace(-1.2, 1.2, side)
    depth = np.linspace(-1.2, 1.2, depth_samples)
    us, ws, vs = np.meshgrid(lin, depth, lin, indexing="ij")  # x(img col), y(depth), z(img row)
    pts = np.stack([us, ws, vs], axis=-1).reshape(-1, 3) @ rot.T
    occ = occupancy(shape, pts).reshape(side, depth_samples, side)
    mask = (occ >= 0.5).any(axis=1)  # (x, z)

    img_mask = mask.T[::-1, :]  # rows: +z at top
    interior = (
        img_mask
        & np.roll(img_mask, 1, axis=0)
        & np.roll(img_mask, -1, axis=0)
        & np.roll(img_mask, 1, axis=1)
        & np.roll(img_mask, -1, axis=1)
    )
    edges = img_mask & ~interior

    pixels = np.zeros((side, side))
    ys, xs = np.nonzero(edges)
    if len(ys):
        rng = np.random.default_rng([seed])
        offsets = np.round(rng.normal(scale=jitter_px, size=(len(ys), 2))).astype(int)
        ys = np.clip(ys + offsets[:, 0], 0, side - 1)
        xs = np.clip(xs + offsets[:, 1], 0, side - 1)
        pixels[ys, xs] = 1.0
    return SketchRaster(pixels)


@dataclass(frozen=True)
class Sample:
    index: int
    shape: ShapeGMM
    raster: SketchRaster
    desc: PartDescription
    z: np.ndarray
    view: str


def write_dataset(
    out_dir: str | Path,
    category: str,
    count: int,
    seed: int,
    views: tuple[str, ...] = VIEWS,
    side: int = 64,
    jitter_px: float = 1.0,
    d_latent: int = 32,
) -> dict:
    """Generate `count` quadruples under `out_dir`; returns the manifest."""
    if category not in TEMPLATES:
        raise ValueError(f"unknown category {category!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = TEMPLATES[category]
    codec = _default_codec(d_latent)
    manifest = {
        "version": 1,
        "category": category,
        "count": count,
        "seed": seed,
        "views": list(views),
        "side": side,
        "jitter_px": jitter_px,
        "d_latent": d_latent,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for i in range(count):
        sample_seed = int(np.random.default_rng([seed, i]).integers(0, 2**31 - 1))
        shape, desc = sample_shape(template, sample_seed, codec)
        view = views[i % len(views)]
        raster = render_sketch(shape, view=view, seed=sample_seed, side=side, jitter_px=jitter_px)
        stem = out / f"{i:04d}"
        stem.with_suffix(".gmm.json").write_text(shape_to_json(shape) + "\n")
        stem.with_suffix(".sketch.png").write_bytes(raster.to_png_bytes())
        stem.with_suffix(".desc.json").write_text(json.dumps(desc.to_dict(), sort_keys=True) + "\n")
        stem.with_suffix(".z.bin").write_bytes(matrix_to_bytes(shape.latents))
    return manifest


def load_dataset(data_dir: str | Path) -> tuple[dict, list[Sample]]:
    data = Path(data_dir)
    manifest = json.loads((data / "manifest.json").read_text())
    samples = []
    for i in range(manifest["count"]):
        stem = data / f"{i:04d}"
        shape = shape_from_json(stem.with_suffix(".gmm.json").read_text())
        raster = SketchRaster.from_png_bytes(stem.with_suffix(".sketch.png").read_bytes())
        desc = PartDescription.from_dict(json.loads(stem.with_suffix(".desc.json").read_text()))
        z = matrix_from_bytes(stem.with_suffix(".z.bin").read_bytes())
        view = manifest["views"][i % len(manifest["views"])]
        samples.append(Sample(index=i, shape=shape, raster=raster, desc=desc, z=z, view=view))
    return manifest, samples
