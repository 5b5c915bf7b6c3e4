"""Multi-angle maximum intensity projection with voxel provenance.

The volume is rotated about the z (yaw) axis and the maximum is taken along
the depth direction. Rotation is done per axial slice: output column ``i`` and
depth sample ``d`` are mapped back into the slice plane, sampled, and the
maximum over ``d`` is kept together with the voxel that supplied it.

Geometry (in isotropic in-plane pixel units)::

    u = i - (W - 1) / 2          v = d - (D - 1) / 2
    X = cx + u*cos(t) + v*sin(t)
    Y = cy - u*sin(t) + v*cos(t)

where ``(cx, cy)`` is the continuous slice centre. At 0 degrees columns run
along x and depth along y. A sample is in field when it falls inside a voxel's
footprint, ``-0.5 <= x < nx - 0.5`` (same for y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numba
import numpy as np
from numba import njit, prange

from .errors import InvalidParameterError
from .volume import Volume3D, VolumeKind

# The TBB shipped here is too old for numba; workqueue is always available.
numba.config.THREADING_LAYER = "workqueue"

SENTINEL = -1
INTERP_MODES = ("linear", "nearest")


@dataclass(frozen=True)
class AngularPlan:
    n: int
    delta_theta: float
    angles: tuple

    def __len__(self):
        return self.n


def angular_plan(n: int) -> AngularPlan:
    """Equal steps of 180/n degrees covering [0, 180)."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise InvalidParameterError(f"number of MIPs must be a positive integer, got {n!r}")
    n = int(n)
    delta = 180.0 / n
    return AngularPlan(n, delta, tuple(k * delta for k in range(n)))


@dataclass(frozen=True, eq=False)
class MipImage:
    data: np.ndarray  # (rows, cols); rows index z
    angle_deg: float
    kind: VolumeKind = VolumeKind.INTENSITY

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ProvenanceMap:
    """Source voxel ``(ix, iy, iz)`` per pixel; ``(-1, -1, -1)`` when out of field."""

    data: np.ndarray  # (rows, cols, 3) int32
    angle_deg: float

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def in_field(self):
        return self.data[..., 0] != SENTINEL


@dataclass(frozen=True, eq=False)
class MipStack:
    plan: AngularPlan
    images: List[MipImage]
    provenance: Optional[List[ProvenanceMap]] = None

    def __post_init__(self):
        if len(self.images) != self.plan.n:
            raise InvalidParameterError("stack size does not match plan")
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise InvalidParameterError(f"stack images have differing shapes {shapes}")
        for im, a in zip(self.images, self.plan.angles):
            if im.angle_deg != a:
                raise InvalidParameterError("image angle does not match plan")

    @property
    def kind(self):
        return self.images[0].kind

    def array(self):
        return np.stack([im.data for im in self.images])

    def provenance_array(self):
        if self.provenance is None:
            return None
        return np.stack([p.data for p in self.provenance])


@dataclass(frozen=True)
class Canvas:
    """Output geometry shared by every angle for a given volume shape."""

    rows: int
    width: int
    depth: int
    center_x: float  # rotation centre, isotropic in-plane units
    center_y: float
    scale_x: float  # isotropic units -> source x index
    scale_y: float


def canvas_for(dims, spacing=None) -> Canvas:
    """Circumscribing canvas for a volume of ``dims = (nx, ny, nz)``.

    The in-plane grid is made isotropic at ``min(sx, sy)``. Width and depth
    are ``ceil(hypot(ex, ey))`` bumped by one where needed so that their parity
    matches the in-plane extents; that keeps 0 and 90 degree samples on voxel
    centres while the rotation centre stays at the canvas centre.
    """
    nx, ny, nz = dims
    sx = spacing.sx if spacing is not None else 1.0
    sy = spacing.sy if spacing is not None else 1.0
    s = min(sx, sy)
    ex = (nx - 1) * sx / s + 1.0
    ey = (ny - 1) * sy / s + 1.0
    base = int(math.ceil(math.hypot(ex, ey) - 1e-9))
    width = base + ((base - int(round(ex))) % 2)
    depth = base + ((base - int(round(ey))) % 2)
    return Canvas(
        rows=nz,
        width=width,
        depth=depth,
        center_x=(ex - 1.0) / 2.0,
        center_y=(ey - 1.0) / 2.0,
        scale_x=s / sx,
        scale_y=s / sy,
    )


def rotation_cos_sin(angle_deg: float):
    """cos/sin with exact values on multiples of 90 and exact sign flip under +180."""
    a = math.fmod(float(angle_deg), 360.0)
    if a < 0:
        a += 360.0
    flip = a >= 180.0
    if flip:
        a -= 180.0
    if a == 0.0:
        c, s = 1.0, 0.0
    elif a == 90.0:
        c, s = 0.0, 1.0
    else:
        r = math.radians(a)
        c, s = math.cos(r), math.sin(r)
    if flip:
        c, s = -c, -s
    return c, s


def sample_positions(canvas: Canvas, angle_deg: float):
    """Source-slice coordinates ``(x, y)`` for every (column, depth) pair."""
    c, s = rotation_cos_sin(angle_deg)
    u = np.arange(canvas.width, dtype=np.float64) - (canvas.width - 1) / 2.0
    v = np.arange(canvas.depth, dtype=np.float64) - (canvas.depth - 1) / 2.0
    uu = u[:, None]
    vv = v[None, :]
    xs = (canvas.center_x + uu * c + vv * s) * canvas.scale_x
    ys = (canvas.center_y - uu * s + vv * c) * canvas.scale_y
    return xs, ys


@njit(parallel=True, cache=True)
def _project_kernel(data, xs, ys, nearest, out, prov):
    nz, ny, nx = data.shape
    width, depth = xs.shape
    xmax = nx - 0.5
    ymax = ny - 0.5
    for z in prange(nz):
        sl = data[z]
        for i in range(width):
            best = -np.inf
            bx = -1
            by = -1
            for d in range(depth):
                x = xs[i, d]
                y = ys[i, d]
                if not (x >= -0.5 and x < xmax and y >= -0.5 and y < ymax):
                    continue
                ix = int(math.floor(x + 0.5))
                iy = int(math.floor(y + 0.5))
                if nearest:
                    val = float(sl[iy, ix])
                else:
                    # clamp to the outermost voxel centres (edge extension)
                    xc = min(max(x, 0.0), nx - 1.0)
                    yc = min(max(y, 0.0), ny - 1.0)
                    x0 = int(math.floor(xc))
                    y0 = int(math.floor(yc))
                    x1 = min(x0 + 1, nx - 1)
                    y1 = min(y0 + 1, ny - 1)
                    wx = xc - x0
                    wy = yc - y0
                    top = (1.0 - wx) * sl[y0, x0] + wx * sl[y0, x1]
                    bot = (1.0 - wx) * sl[y1, x0] + wx * sl[y1, x1]
                    val = (1.0 - wy) * top + wy * bot
                if val > best:
                    best = val
                    bx = ix
                    by = iy
            if bx < 0:
                out[z, i] = 0
                prov[z, i, 0] = -1
                prov[z, i, 1] = -1
                prov[z, i, 2] = -1
            else:
                out[z, i] = best
                prov[z, i, 0] = bx
                prov[z, i, 1] = by
                prov[z, i, 2] = z


def set_workers(workers: Optional[int]):
    """Set the kernel thread count; ``None`` means all available threads."""
    n = numba.config.NUMBA_NUM_THREADS if workers is None else int(workers)
    if n < 1:
        raise InvalidParameterError(f"workers must be >= 1, got {workers}")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _check_interp(volume: Volume3D, interp: str):
    if interp not in INTERP_MODES:
        raise InvalidParameterError(f"interp must be one of {INTERP_MODES}, got {interp!r}")
    if volume.is_label and interp != "nearest":
        raise InvalidParameterError("label volumes must be projected with nearest interpolation")


def _project(volume: Volume3D, angle_deg: float, interp: str, canvas: Canvas):
    if not math.isfinite(angle_deg):
        raise InvalidParameterError(f"angle must be finite, got {angle_deg}")
    xs, ys = sample_positions(canvas, angle_deg)
    out_dtype = np.uint8 if volume.is_label else np.float32
    out = np.empty((canvas.rows, canvas.width), dtype=out_dtype)
    prov = np.empty((canvas.rows, canvas.width, 3), dtype=np.int32)
    _project_kernel(volume.data, xs, ys, interp == "nearest", out, prov)
    return out, prov


def project_mip(volume: Volume3D, angle_deg: float, interp: str = "linear"):
    """Project one angle. Returns ``(MipImage, ProvenanceMap)``."""
    _check_interp(volume, interp)
    canvas = canvas_for(volume.dims, volume.spacing)
    out, prov = _project(volume, float(angle_deg), interp, canvas)
    return MipImage(out, float(angle_deg), volume.kind), ProvenanceMap(prov, float(angle_deg))


def project_stack(volume: Volume3D, plan: AngularPlan, interp: str = "linear", workers=None) -> MipStack:
    _check_interp(volume, interp)
    if workers is not None:
        set_workers(workers)
    canvas = canvas_for(volume.dims, volume.spacing)
    images, provs = [], []
    for angle in plan.angles:
        out, prov = _project(volume, angle, interp, canvas)
        images.append(MipImage(out, angle, volume.kind))
        provs.append(ProvenanceMap(prov, angle))
    return MipStack(plan, images, provs)


def project_labels(labels: Volume3D, plan: AngularPlan, workers=None) -> MipStack:
    """Binary annotation MIPs (nearest sampling, no provenance kept)."""
    if not labels.is_label:
        if not np.isin(labels.data, (0, 1)).all():
            raise InvalidParameterError("annotation volume must be binary")
        labels = Volume3D(labels.data, labels.spacing, VolumeKind.LABEL)
    stack = project_stack(labels, plan, "nearest", workers)
    return MipStack(plan, stack.images, None)


def mirror(mip: MipImage) -> MipImage:
    """The view from the opposite side: columns reversed, angle + 180."""
    return MipImage(np.ascontiguousarray(mip.data[:, ::-1]), mip.angle_deg + 180.0, mip.kind)
