"""Sphere phantoms with known geometry, and a ray-marching visibility oracle."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import InvalidParameterError
from .projection import Canvas, canvas_for, rotation_cos_sin
from .volume import Spacing, Volume3D, VolumeKind

ORGAN = "organ"
TUMOR = "tumor"

OUT_OF_FIELD = -1
BACKGROUND = 0


@dataclass(frozen=True)
class SphereSpec:
    center: Tuple[float, float, float]  # (cx, cy, cz) in voxel coordinates
    radius: float
    intensity: float
    kind: str = TUMOR

    def __post_init__(self):
        if self.kind not in (ORGAN, TUMOR):
            raise InvalidParameterError(f"sphere kind must be organ or tumor, got {self.kind!r}")
        if not self.radius > 0:
            raise InvalidParameterError(f"sphere radius must be > 0, got {self.radius}")
        if not self.intensity > 0:
            raise InvalidParameterError(f"sphere intensity must be > 0, got {self.intensity}")


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int]  # (nx, ny, nz)
    spheres: List[SphereSpec] = field(default_factory=list)
    spacing: Spacing = field(default_factory=Spacing)
    background_intensity: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidParameterError(f"dims must be three positive ints, got {self.dims}")
        if self.background_intensity < 0 or self.noise_sigma < 0:
            raise InvalidParameterError("background and noise_sigma must be >= 0")
        if self.noise_sigma == 0 and self.spheres:
            lowest = min(s.intensity for s in self.spheres)
            if not self.background_intensity < lowest:
                raise InvalidParameterError(
                    "background must be below every sphere intensity in a noiseless phantom"
                )


def _contains(sphere: SphereSpec, x, y, z):
    cx, cy, cz = sphere.center
    return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= sphere.radius ** 2


def _classify(spec: PhantomSpec, x, y, z):
    """Value and owning object at voxel centres ``(x, y, z)`` (integer arrays).

    Object ids are ``k + 1`` for ``spec.spheres[k]``; 0 is background. A voxel
    inside any tumor sphere belongs to that tumor, matching the label union.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    value = np.full(np.broadcast(x, y, z).shape, spec.background_intensity, dtype=np.float64)
    organ_obj = np.zeros(value.shape, dtype=np.int32)
    organ_val = np.full(value.shape, -np.inf)
    tumor_obj = np.zeros(value.shape, dtype=np.int32)
    tumor_val = np.full(value.shape, -np.inf)
    for k, sph in enumerate(spec.spheres):
        inside = _contains(sph, x, y, z)
        value = np.where(inside, np.maximum(value, sph.intensity), value)
        if sph.kind == TUMOR:
            better = inside & (sph.intensity > tumor_val)
            tumor_obj = np.where(better, k + 1, tumor_obj)
            tumor_val = np.where(better, sph.intensity, tumor_val)
        else:
            better = inside & (sph.intensity > organ_val)
            organ_obj = np.where(better, k + 1, organ_obj)
            organ_val = np.where(better, sph.intensity, organ_val)
    obj = np.where(tumor_obj > 0, tumor_obj, organ_obj)
    return value, obj


def generate(spec: PhantomSpec):
    """Return ``(intensity volume, binary tumor label volume)``."""
    nx, ny, nz = spec.dims
    z, y, x = np.indices((nz, ny, nx), dtype=np.float64)
    value = np.full((nz, ny, nx), spec.background_intensity, dtype=np.float64)
    labels = np.zeros((nz, ny, nx), dtype=np.uint8)
    for sph in spec.spheres:
        inside = _contains(sph, x, y, z)
        if not inside.any():
            warnings.warn(f"sphere at {sph.center} r={sph.radius} contains no voxel centre")
        np.maximum(value, np.where(inside, sph.intensity, value), out=value)
        if sph.kind == TUMOR:
            labels[inside] = 1
    if spec.noise_sigma > 0:
        # Philox is counter-based: the stream depends only on the seed and voxel order.
        rng = np.random.Generator(np.random.Philox(key=spec.seed))
        value = value + spec.noise_sigma * rng.standard_normal(value.shape)
    intensity = Volume3D(value.astype(np.float32), spec.spacing, VolumeKind.INTENSITY)
    return intensity, Volume3D(labels, spec.spacing, VolumeKind.LABEL)


def _march(spec: PhantomSpec, angle_deg: float, canvas: Canvas):
    """Yield ``(column, value, obj)`` with arrays of shape (nz, samples) per ray column."""
    nx, ny, nz = spec.dims
    c, s = rotation_cos_sin(angle_deg)
    for i in range(canvas.width):
        u = i - (canvas.width - 1) / 2.0
        samples = []
        for d in range(canvas.depth):
            v = d - (canvas.depth - 1) / 2.0
            x = (canvas.center_x + u * c + v * s) * canvas.scale_x
            y = (canvas.center_y - u * s + v * c) * canvas.scale_y
            if -0.5 <= x < nx - 0.5 and -0.5 <= y < ny - 0.5:
                samples.append((int(np.floor(x + 0.5)), int(np.floor(y + 0.5))))
        if not samples:
            continue
        sx = np.array([p[0] for p in samples])[None, :]
        sy = np.array([p[1] for p in samples])[None, :]
        sz = np.arange(nz)[:, None]
        value, obj = _classify(spec, sx, sy, sz)
        yield i, value.astype(np.float32), obj  # compare at the volume's precision


def oracle_visibility(spec: PhantomSpec, angle_deg: float, canvas: Canvas = None) -> np.ndarray:
    """Which object supplies the maximum at every MIP pixel.

    Rays are marched through nearest voxel centres and every sample is
    evaluated analytically from the sphere list, not from a rasterised volume.
    Returns an int array (rows, cols): -1 out of field, 0 background, ``k + 1``
    for ``spec.spheres[k]``. Ties go to the smallest depth index.
    """
    if spec.noise_sigma != 0:
        raise InvalidParameterError("visibility oracle requires a noiseless phantom")
    canvas = canvas or canvas_for(spec.dims, spec.spacing)
    nz = spec.dims[2]
    winner = np.full((nz, canvas.width), OUT_OF_FIELD, dtype=np.int32)
    for i, value, obj in _march(spec, angle_deg, canvas):
        first_max = np.argmax(value == value.max(axis=1, keepdims=True), axis=1)
        winner[:, i] = obj[np.arange(nz), first_max]
    return winner


def oracle_annotation(spec: PhantomSpec, angle_deg: float, canvas: Canvas = None) -> np.ndarray:
    """Pixels whose ray samples at least one tumor voxel (the uncorrected annotation)."""
    canvas = canvas or canvas_for(spec.dims, spec.spacing)
    ids = np.array(sorted(tumor_ids(spec)), dtype=np.int32)
    out = np.zeros((spec.dims[2], canvas.width), dtype=bool)
    for i, _, obj in _march(spec, angle_deg, canvas):
        out[:, i] = np.isin(obj, ids).any(axis=1)
    return out


def tumor_ids(spec: PhantomSpec):
    return {k + 1 for k, s in enumerate(spec.spheres) if s.kind == TUMOR}


def tumor_won_mask(spec: PhantomSpec, winner: np.ndarray) -> np.ndarray:
    """Pixels whose maximum is supplied by a tumor sphere."""
    ids = np.array(sorted(tumor_ids(spec)), dtype=np.int32)
    return np.isin(winner, ids)
