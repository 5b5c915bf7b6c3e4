"""3D volume model, axis convention and SUV scaling.

Arrays are stored as ``data[z, y, x]`` in C order, so x varies fastest and every
axial slice ``data[z]`` is contiguous. z is the superior-inferior (yaw) axis,
y the anterior-posterior (projection depth) axis, x left-right.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidParameterError


class VolumeKind(str, Enum):
    INTENSITY = "intensity"
    LABEL = "label"


@dataclass(frozen=True)
class Spacing:
    sx: float = 1.0
    sy: float = 1.0
    sz: float = 1.0

    def __post_init__(self):
        for name in ("sx", "sy", "sz"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"spacing {name} must be positive and finite, got {v}")

    def as_tuple(self):
        return (self.sx, self.sy, self.sz)


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Immutable scalar volume. ``data`` has shape (nz, ny, nx)."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=Spacing)
    kind: VolumeKind = VolumeKind.INTENSITY

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3:
            raise InvalidParameterError(f"volume data must be 3D, got shape {arr.shape}")
        if self.kind == VolumeKind.LABEL:
            if not np.isin(arr, (0, 1)).all():
                raise InvalidParameterError("label volume must contain only 0 and 1")
            arr = arr.astype(np.uint8, copy=False)
        else:
            arr = arr.astype(np.float32, copy=False)
            if not np.isfinite(arr).all():
                raise InvalidParameterError("intensity volume contains NaN or Inf")
        if arr is self.data:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self):
        """Voxel counts as (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def is_label(self):
        return self.kind == VolumeKind.LABEL

    def voxel(self, ix, iy, iz):
        return self.data[iz, iy, ix]

    def flat(self):
        """Data as a 1D array, x fastest then y then z."""
        return self.data.reshape(-1)


def from_xyz(arr, spacing=None, kind=VolumeKind.INTENSITY) -> Volume3D:
    """Build a volume from an array indexed ``arr[x, y, z]``."""
    return Volume3D(np.transpose(np.asarray(arr), (2, 1, 0)), spacing or Spacing(), kind)


@dataclass(frozen=True)
class SuvParams:
    injected_dose: float  # Bq, decay-corrected to scan time
    body_weight: float  # g

    def __post_init__(self):
        if not (self.injected_dose > 0 and np.isfinite(self.injected_dose)):
            raise InvalidParameterError(f"injected_dose must be > 0, got {self.injected_dose}")
        if not (self.body_weight > 0 and np.isfinite(self.body_weight)):
            raise InvalidParameterError(f"body_weight must be > 0, got {self.body_weight}")


def suv_normalize(activity: Volume3D, params: SuvParams) -> Volume3D:
    """Body-weight SUV: activity [Bq/mL] * weight [g] / dose [Bq]."""
    if activity.is_label:
        raise InvalidParameterError("SUV normalization needs an intensity volume")
    factor = params.body_weight / params.injected_dose
    data = activity.data.astype(np.float64) * factor
    return Volume3D(data.astype(np.float32), activity.spacing, VolumeKind.INTENSITY)


@dataclass
class Diagnostics:
    nan_count: int
    inf_count: int
    min: Optional[float]
    max: Optional[float]
    distinct_values: Optional[frozenset] = None
    non_binary: bool = False


def validate(data, kind=VolumeKind.INTENSITY) -> Diagnostics:
    """Report non-finite counts, range and (for labels) distinct values.

    Accepts a raw array as well as a :class:`Volume3D`, since a constructed
    volume has already rejected the worst problems. Never modifies the input.
    """
    if isinstance(data, Volume3D):
        kind = data.kind
        data = data.data
    arr = np.asarray(data)
    nan_count = int(np.isnan(arr).sum()) if arr.dtype.kind == "f" else 0
    inf_count = int(np.isinf(arr).sum()) if arr.dtype.kind == "f" else 0
    finite = arr[np.isfinite(arr)] if arr.dtype.kind == "f" else arr.ravel()
    lo = float(finite.min()) if finite.size else None
    hi = float(finite.max()) if finite.size else None
    diag = Diagnostics(nan_count, inf_count, lo, hi)
    if VolumeKind(kind) == VolumeKind.LABEL:
        values = frozenset(np.unique(finite).tolist())
        diag.distinct_values = values
        diag.non_binary = not values <= {0, 1}
    return diag
