"""Part-level shape representation: N anisotropic Gaussians plus per-part latents.

The occupancy field is the max over per-part Gaussian densities, truncated
at Mahalanobis 6 so an edit to one part provably cannot change the field
anywhere beyond that part's 6-sigma ellipsoid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianPart",
    "ShapeGMM",
    "EditError",
    "Translate",
    "Rescale",
    "Rotate",
    "Delete",
    "Restore",
    "occupancy",
    "apply_edit",
    "edit_to_dict",
    "edit_from_dict",
    "shape_to_dict",
    "shape_from_dict",
    "shape_to_json",
    "shape_from_json",
]

MU_BOUND = 1.5
# exp(-CUTOFF/2) is subtracted and rescaled away, making the density exactly
# zero outside the 6-sigma ellipsoid.
CUTOFF = 36.0
_FLOOR = np.exp(-CUTOFF / 2.0)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianPart:
    """One ellipsoidal part: center, principal axes (columns), radii, mixing weight."""

    mu: np.ndarray
    axes: np.ndarray
    scales: np.ndarray
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "mu", _freeze(self.mu))
        object.__setattr__(self, "axes", _freeze(self.axes))
        object.__setattr__(self, "scales", _freeze(self.scales))
        object.__setattr__(self, "weight", float(self.weight))
        if self.mu.shape != (3,) or self.axes.shape != (3, 3) or self.scales.shape != (3,):
            raise ValueError("part fields must be mu (3,), axes (3,3), scales (3,)")
        if not np.allclose(self.axes.T @ self.axes, np.eye(3), atol=1e-9):
            raise ValueError("axes must be orthonormal within 1e-9")
        if np.linalg.det(self.axes) < 0:
            raise ValueError("axes must be a proper rotation (det +1)")
        if not (self.scales > 0).all():
            raise ValueError("scales must be positive")
        if not (0.0 <= self.weight <= 1.0):
            raise ValueError(f"weight {self.weight} outside [0, 1]")

    @property
    def active(self) -> bool:
        return self.weight > 0.0

    def covariance(self) -> np.ndarray:
        return self.axes @ np.diag(self.scales**2) @ self.axes.T


@dataclass(frozen=True)
class ShapeGMM:
    """A shape as a fixed-size tuple of parts with one latent vector per part."""

    parts: tuple[GaussianPart, ...]
    latents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        object.__setattr__(self, "latents", _freeze(self.latents))
        if self.latents.ndim != 2 or self.latents.shape[0] != len(self.parts):
            raise ValueError(
                f"latents {self.latents.shape} must have one row per part ({len(self.parts)})"
            )
        for i, p in enumerate(self.parts):
            if np.abs(p.mu).max() > MU_BOUND:
                raise ValueError(f"part {i} center {p.mu} outside [-{MU_BOUND}, {MU_BOUND}]^3")

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def means(self) -> np.ndarray:
        return np.stack([p.mu for p in self.parts])

    def replace_part(self, index: int, part: GaussianPart, latent: np.ndarray | None = None) -> "ShapeGMM":
        parts = list(self.parts)
        parts[index] = part
        latents = self.latents
        if latent is not None:
            latents = np.array(self.latents)
            latents[index] = latent
        return ShapeGMM(parts=tuple(parts), latents=latents)


def part_density(part: GaussianPart, points: np.ndarray) -> np.ndarray:
    """Truncated Gaussian density of one part at (m, 3) points, in [0, weight]."""
    delta = points - part.mu
    local = delta @ part.axes
    maha = ((local / part.scales) ** 2).sum(axis=-1)
    raw = np.where(maha < CUTOFF, np.exp(-0.5 * np.minimum(maha, CUTOFF)), 0.0)
    return part.weight * np.maximum(0.0, (raw - _FLOOR) / (1.0 - _FLOOR))


def occupancy(shape: ShapeGMM, points: np.ndarray):
    """Max-union occupancy in [0, 1]; accepts one point (3,) or a batch (m, 3)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    field = np.zeros(pts.shape[0])
    for part in shape.parts:
        if not part.active:
            continue
        # density is exactly zero beyond 6 * max(scales), so skip far points
        reach2 = CUTOFF * float(part.scales.max()) ** 2
        delta = pts - part.mu
        near = np.einsum("ij,ij->i", delta, delta) <= reach2
        if not near.any():
            continue
        field[near] = np.maximum(field[near], part_density(part, pts[near]))
    return float(field[0]) if single else field


class EditError(ValueError):
    """Invalid edit: bad part index or illegal payload."""


@dataclass(frozen=True)
class Translate:
    parts: tuple[int, ...]
    delta: np.ndarray


@dataclass(frozen=True)
class Rescale:
    parts: tuple[int, ...]
    factors: np.ndarray


@dataclass(frozen=True)
class Rotate:
    parts: tuple[int, ...]
    rotation: np.ndarray


@dataclass(frozen=True)
class Delete:
    parts: tuple[int, ...]


@dataclass(frozen=True)
class Restore:
    part: int
    template: GaussianPart
    latent: np.ndarray | None = None


EditOp = Translate | Rescale | Rotate | Delete | Restore


def _check_indices(shape: ShapeGMM, indices) -> tuple[int, ...]:
    idx = tuple(int(i) for i in indices)
    if not idx:
        raise EditError("edit targets no parts")
    for i in idx:
        if not (0 <= i < shape.n_parts):
            raise EditError(f"part index {i} out of range [0, {shape.n_parts})")
    return idx


def apply_edit(shape: ShapeGMM, edit: EditOp) -> ShapeGMM:
    """Apply one edit, returning a new shape. Untouched parts are reused as-is."""
    if isinstance(edit, Translate):
        delta = np.asarray(edit.delta, dtype=np.float64)
        result = shape
        for i in _check_indices(shape, edit.parts):
            p = shape.parts[i]
            result = result.replace_part(i, GaussianPart(p.mu + delta, p.axes, p.scales, p.weight))
        return result
    if isinstance(edit, Rescale):
        factors = np.asarray(edit.factors, dtype=np.float64)
        if not (factors > 0).all():
            raise EditError(f"rescale factors must be positive, got {factors}")
        result = shape
        for i in _check_indices(shape, edit.parts):
            p = shape.parts[i]
            result = result.replace_part(i, GaussianPart(p.mu, p.axes, p.scales * factors, p.weight))
        return result
    if isinstance(edit, Rotate):
        rot = np.asarray(edit.rotation, dtype=np.float64)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise EditError("rotation must be a proper orthonormal matrix")
        result = shape
        for i in _check_indices(shape, edit.parts):
            p = shape.parts[i]
            result = result.replace_part(i, GaussianPart(p.mu, rot @ p.axes, p.scales, p.weight))
        return result
    if isinstance(edit, Delete):
        result = shape
        for i in _check_indices(shape, edit.parts):
            p = shape.parts[i]
            result = result.replace_part(i, GaussianPart(p.mu, p.axes, p.scales, 0.0))
        return result
    if isinstance(edit, Restore):
        (i,) = _check_indices(shape, [edit.part])
        return shape.replace_part(i, edit.template, edit.latent)
    raise EditError(f"unknown edit {edit!r}")


def edit_to_dict(edit: EditOp) -> dict:
    if isinstance(edit, Translate):
        return {"op": "translate", "parts": list(edit.parts), "delta": [float(v) for v in edit.delta]}
    if isinstance(edit, Rescale):
        return {"op": "rescale", "parts": list(edit.parts), "factors": [float(v) for v in edit.factors]}
    if isinstance(edit, Rotate):
        return {"op": "rotate", "parts": list(edit.parts),
                "rotation": [[float(v) for v in row] for row in edit.rotation]}
    if isinstance(edit, Delete):
        return {"op": "delete", "parts": list(edit.parts)}
    if isinstance(edit, Restore):
        out = {"op": "restore", "part": int(edit.part), "template": _part_to_dict(edit.template)}
        if edit.latent is not None:
            out["latent"] = [float(v) for v in edit.latent]
        return out
    raise EditError(f"unknown edit {edit!r}")


def edit_from_dict(d: dict) -> EditOp:
    try:
        op = d["op"]
        if op == "translate":
            return Translate(tuple(d["parts"]), np.asarray(d["delta"], dtype=np.float64))
        if op == "rescale":
            return Rescale(tuple(d["parts"]), np.asarray(d["factors"], dtype=np.float64))
        if op == "rotate":
            return Rotate(tuple(d["parts"]), np.asarray(d["rotation"], dtype=np.float64))
        if op == "delete":
            return Delete(tuple(d["parts"]))
        if op == "restore":
            latent = np.asarray(d["latent"], dtype=np.float64) if "latent" in d else None
            return Restore(int(d["part"]), _part_from_dict(d["template"]), latent)
    except (KeyError, TypeError, ValueError) as exc:
        raise EditError(f"malformed edit payload: {exc}") from exc
    raise EditError(f"unknown edit op {op!r}")


def _part_to_dict(p: GaussianPart) -> dict:
    return {
        "mu": [float(v) for v in p.mu],
        "axes": [[float(v) for v in row] for row in p.axes],
        "scales": [float(v) for v in p.scales],
        "weight": float(p.weight),
    }


def _part_from_dict(d: dict) -> GaussianPart:
    return GaussianPart(
        mu=np.asarray(d["mu"], dtype=np.float64),
        axes=np.asarray(d["axes"], dtype=np.float64),
        scales=np.asarray(d["scales"], dtype=np.float64),
        weight=float(d["weight"]),
    )


def shape_to_dict(shape: ShapeGMM) -> dict:
    return {
        "version": 1,
        "parts": [_part_to_dict(p) for p in shape.parts],
        "latents": [[float(v) for v in row] for row in shape.latents],
    }


def shape_from_dict(d: dict) -> ShapeGMM:
    if d.get("version") != 1:
        raise ValueError(f"unsupported GMM schema version {d.get('version')!r}")
    parts = tuple(_part_from_dict(p) for p in d["parts"])
    return ShapeGMM(parts=parts, latents=np.asarray(d["latents"], dtype=np.float64))


def shape_to_json(shape: ShapeGMM) -> str:
    """Canonical serialization; equal shapes produce byte-identical JSON."""
    return json.dumps(shape_to_dict(shape), sort_keys=True, separators=(",", ":"))


def shape_from_json(text: str) -> ShapeGMM:
    return shape_from_dict(json.loads(text))
