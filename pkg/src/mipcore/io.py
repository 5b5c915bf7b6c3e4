"""File formats: NIfTI-1 volumes, MIPS stack containers, PGM previews, CSV/JSON reports,
and the phantom spec text format."""
from __future__ import annotations

import csv
import gzip
import io as _io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import FormatError, InvalidParameterError
from .occlusion import CorrectionReport
from .phantom import PhantomSpec, SphereSpec
from .projection import AngularPlan, MipImage, MipStack, ProvenanceMap
from .volume import Spacing, Volume3D, VolumeKind

log = logging.getLogger(__name__)

# --------------------------------------------------------------------------- NIfTI-1

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352

_NIFTI_DTYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    16: np.dtype("f4"),
    64: np.dtype("f8"),
    512: np.dtype("u2"),
}
_NIFTI_CODES = {np.dtype("u1"): 2, np.dtype("f4"): 16}


@dataclass
class NiftiHeader:
    endian: str
    dims: tuple  # (nx, ny, nz)
    datatype: int
    pixdim: tuple  # (sx, sy, sz)
    vox_offset: int
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    srow: tuple  # 3 rows of 4 values
    magic: bytes


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_nifti_header(raw: bytes) -> NiftiHeader:
    if len(raw) < NIFTI_HEADER_SIZE:
        raise FormatError(f"header truncated: {len(raw)} bytes, need {NIFTI_HEADER_SIZE}")
    if struct.unpack("<i", raw[:4])[0] == NIFTI_HEADER_SIZE:
        e = "<"
    elif struct.unpack(">i", raw[:4])[0] == NIFTI_HEADER_SIZE:
        e = ">"
    else:
        raise FormatError(f"sizeof_hdr is {struct.unpack('<i', raw[:4])[0]}, expected 348")
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise FormatError("magic 'ni1': .hdr/.img pairs are not supported")
    if magic != b"n+1\x00":
        raise FormatError(f"magic is {magic!r}, expected b'n+1\\x00'")
    dim = struct.unpack(e + "8h", raw[40:56])
    if dim[0] != 3:
        raise FormatError(f"dim[0] is {dim[0]}: only 3D volumes are supported")
    if min(dim[1:4]) < 1:
        raise FormatError(f"dim[1..3] must be positive, got {dim[1:4]}")
    datatype = struct.unpack(e + "h", raw[70:72])[0]
    if datatype not in _NIFTI_DTYPES:
        raise FormatError(f"datatype {datatype} unsupported (allowed: u8, i16, u16, f32, f64)")
    pixdim = struct.unpack(e + "8f", raw[76:108])
    vox_offset = struct.unpack(e + "f", raw[108:112])[0]
    slope, inter = struct.unpack(e + "2f", raw[112:120])
    qform_code, sform_code = struct.unpack(e + "2h", raw[252:256])
    srow = struct.unpack(e + "12f", raw[280:328])
    return NiftiHeader(
        endian=e,
        dims=tuple(int(d) for d in dim[1:4]),
        datatype=datatype,
        pixdim=tuple(float(p) for p in pixdim[1:4]),
        vox_offset=int(vox_offset),
        scl_slope=float(slope),
        scl_inter=float(inter),
        qform_code=int(qform_code),
        sform_code=int(sform_code),
        srow=(srow[0:4], srow[4:8], srow[8:12]),
        magic=magic,
    )


def read_nifti(path, kind=VolumeKind.INTENSITY, axis_permute: Optional[str] = None) -> Volume3D:
    """Read a single-file NIfTI-1 volume (optionally gzipped).

    The file's first three axes are taken as (x, y, z). Orientation matrices are
    logged but not applied; use ``axis_permute`` to reorder or flip axes.
    """
    raw = _read_bytes(path)
    hdr = parse_nifti_header(raw)
    if hdr.qform_code or hdr.sform_code:
        log.info("%s: qform_code=%d sform_code=%d srow=%s (not applied)",
                 path, hdr.qform_code, hdr.sform_code, hdr.srow)
    nx, ny, nz = hdr.dims
    dtype = _NIFTI_DTYPES[hdr.datatype].newbyteorder(hdr.endian)
    need = nx * ny * nz * dtype.itemsize
    payload = raw[hdr.vox_offset:hdr.vox_offset + need]
    if hdr.vox_offset < NIFTI_HEADER_SIZE or len(payload) != need:
        raise FormatError(
            f"payload truncated: vox_offset {hdr.vox_offset}, need {need} bytes, have {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    slope, inter = hdr.scl_slope, hdr.scl_inter
    if slope == 0 or not np.isfinite(slope):
        if inter != 0:
            log.warning("%s: scl_slope is %s; treating scaling as identity", path, slope)
        values = data.astype(np.float32)
    elif slope == 1 and inter == 0:
        values = data.astype(np.float32)
    else:
        values = (data.astype(np.float64) * slope + inter).astype(np.float32)
    spacing = []
    for name, p in zip(("pixdim[1]", "pixdim[2]", "pixdim[3]"), hdr.pixdim):
        if not (np.isfinite(p) and p > 0):
            log.warning("%s: %s is %s; using 1.0", path, name, p)
            p = 1.0
        spacing.append(abs(p))
    vol = Volume3D(values, Spacing(*spacing), VolumeKind(kind))
    if axis_permute:
        vol = apply_axis_permute(vol, axis_permute)
    return vol


def apply_axis_permute(volume: Volume3D, permute: str) -> Volume3D:
    """Reorder/flip axes. ``"y,x,-z"`` makes new x = old y, new y = old x, new z = old z flipped."""
    parts = [p.strip() for p in permute.replace(" ", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise InvalidParameterError(f"axis permutation needs three axes, got {permute!r}")
    names = [p.lstrip("+-") for p in parts]
    if sorted(names) != ["x", "y", "z"]:
        raise InvalidParameterError(f"axis permutation must use each of x, y, z once, got {permute!r}")
    xyz = np.transpose(volume.data, (2, 1, 0))  # [x, y, z]
    order = ["xyz".index(n) for n in names]
    out = np.transpose(xyz, order)
    for axis, part in enumerate(parts):
        if part.startswith("-"):
            out = np.flip(out, axis=axis)
    sp = volume.spacing.as_tuple()
    spacing = Spacing(*(sp[o] for o in order))
    return Volume3D(np.ascontiguousarray(np.transpose(out, (2, 1, 0))), spacing, volume.kind)


def encode_nifti(volume: Volume3D) -> bytes:
    """Little-endian NIfTI-1 bytes: u8 for labels, f32 otherwise."""
    dtype = np.dtype("u1") if volume.is_label else np.dtype("f4")
    nx, ny, nz = volume.dims
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, _NIFTI_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *volume.spacing.as_tuple(), 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<fff", hdr, 108, float(NIFTI_VOX_OFFSET), 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = b"n+1\x00"
    payload = volume.data.astype(dtype.newbyteorder("<"), copy=False).tobytes()
    return bytes(hdr) + b"\x00" * 4 + payload


def write_nifti(volume: Volume3D, path):
    """Write ``.nii`` or, for a ``.gz`` suffix, a gzip stream with fixed mtime."""
    data = encode_nifti(volume)
    path = Path(path)
    if path.suffix == ".gz":
        buf = _io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    path.write_bytes(data)


# --------------------------------------------------------------------------- MIPS container

MIPS_MAGIC = b"MIPS"
MIPS_VERSION = 1
_MIPS_HEADER = struct.Struct("<4sHBHIIB")

KIND_INTENSITY, KIND_LABEL, KIND_PROVENANCE = 0, 1, 2
DTYPE_F32, DTYPE_U8, DTYPE_PROV = 0, 1, 2
_DTYPE_FOR_KIND = {KIND_INTENSITY: DTYPE_F32, KIND_LABEL: DTYPE_U8, KIND_PROVENANCE: DTYPE_PROV}
_DTYPE_SIZE = {DTYPE_F32: 4, DTYPE_U8: 1, DTYPE_PROV: 12}
_NUMPY_DTYPE = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1"), DTYPE_PROV: np.dtype("<i4")}


@dataclass(eq=False)
class MipContainer:
    kind: int
    angles: tuple
    data: np.ndarray  # (n, rows, cols) or (n, rows, cols, 3) for provenance

    @property
    def rows(self):
        return self.data.shape[1]

    @property
    def cols(self):
        return self.data.shape[2]

    def plan(self) -> AngularPlan:
        n = len(self.angles)
        return AngularPlan(n, 180.0 / n, tuple(self.angles))

    def to_stack(self, provenance: "MipContainer" = None) -> MipStack:
        if self.kind == KIND_PROVENANCE:
            raise InvalidParameterError("a provenance container is not an image stack")
        vk = VolumeKind.LABEL if self.kind == KIND_LABEL else VolumeKind.INTENSITY
        images = [MipImage(self.data[k], a, vk) for k, a in enumerate(self.angles)]
        provs = None
        if provenance is not None:
            if provenance.angles != self.angles or provenance.data.shape[:3] != self.data.shape:
                raise InvalidParameterError("provenance container does not match image container")
            provs = [ProvenanceMap(provenance.data[k], a) for k, a in enumerate(self.angles)]
        return MipStack(self.plan(), images, provs)


def container_from_stack(stack: MipStack, provenance: bool = False) -> MipContainer:
    angles = tuple(float(a) for a in stack.plan.angles)
    if provenance:
        if stack.provenance is None:
            raise InvalidParameterError("stack has no provenance")
        return MipContainer(KIND_PROVENANCE, angles, stack.provenance_array().astype(np.int32))
    if stack.kind == VolumeKind.LABEL:
        return MipContainer(KIND_LABEL, angles, stack.array().astype(np.uint8))
    return MipContainer(KIND_INTENSITY, angles, stack.array().astype(np.float32))


def encode_mip_container(c: MipContainer) -> bytes:
    dtype_code = _DTYPE_FOR_KIND[c.kind]
    n, rows, cols = c.data.shape[:3]
    if n != len(c.angles):
        raise InvalidParameterError("angle count does not match image count")
    head = _MIPS_HEADER.pack(MIPS_MAGIC, MIPS_VERSION, c.kind, n, rows, cols, dtype_code)
    angles = struct.pack(f"<{n}d", *c.angles)
    payload = np.ascontiguousarray(c.data, dtype=_NUMPY_DTYPE[dtype_code]).tobytes()
    return head + angles + payload


def decode_mip_container(raw: bytes) -> MipContainer:
    if len(raw) < _MIPS_HEADER.size:
        raise FormatError(f"container header truncated ({len(raw)} bytes)")
    magic, version, kind, n, rows, cols, dtype_code = _MIPS_HEADER.unpack_from(raw)
    if magic != MIPS_MAGIC:
        raise FormatError(f"magic is {magic!r}, expected b'MIPS'")
    if version != MIPS_VERSION:
        raise FormatError(f"version {version} unsupported (expected {MIPS_VERSION})")
    if kind not in _DTYPE_FOR_KIND:
        raise FormatError(f"kind {kind} unknown")
    if dtype_code != _DTYPE_FOR_KIND[kind]:
        raise FormatError(f"dtype {dtype_code} inconsistent with kind {kind}")
    off = _MIPS_HEADER.size
    angles = struct.unpack_from(f"<{n}d", raw, off) if len(raw) >= off + 8 * n else None
    if angles is None:
        raise FormatError("angle table truncated")
    off += 8 * n
    expected = n * rows * cols * _DTYPE_SIZE[dtype_code]
    if len(raw) - off != expected:
        raise FormatError(f"payload length {len(raw) - off} does not match header ({expected} bytes)")
    shape = (n, rows, cols, 3) if kind == KIND_PROVENANCE else (n, rows, cols)
    data = np.frombuffer(raw, dtype=_NUMPY_DTYPE[dtype_code], offset=off).reshape(shape).copy()
    if kind == KIND_LABEL and not np.isin(data, (0, 1)).all():
        raise FormatError("label container holds non-binary values")
    return MipContainer(kind, tuple(angles), data)


def write_mip_container(obj, path, provenance: bool = False) -> int:
    """Write a MipStack (its images, or its provenance) or a MipContainer. Returns bytes written."""
    c = obj if isinstance(obj, MipContainer) else container_from_stack(obj, provenance)
    raw = encode_mip_container(c)
    Path(path).write_bytes(raw)
    return len(raw)


def read_mip_container(path) -> MipContainer:
    return decode_mip_container(Path(path).read_bytes())


# --------------------------------------------------------------------------- PGM

def export_pgm(mip, path, window):
    """16-bit binary PGM with linear windowing ``(lo, hi)`` and clamping."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise InvalidParameterError(f"window must satisfy lo < hi, got {window}")
    data = mip.data if isinstance(mip, MipImage) else np.asarray(mip)
    t = np.clip((data.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    samples = np.floor(65535.0 * t + 0.5).astype(">u2")
    rows, cols = samples.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n65535\n".encode("ascii") + samples.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM (P5)")
    cols, rows = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype).reshape(rows, cols)


# --------------------------------------------------------------------------- reports

SCORE_COLUMNS = ["case_id", "angle_deg", "dice", "iou", "hausdorff", "hd_undefined_flag"]
CORRECTION_COLUMNS = ["case_id", "angle_deg", "component_id", "pixel_count", "origin_fraction",
                      "action", "retained_px"]


@dataclass
class ScoreRow:
    case_id: str
    angle_deg: float
    dice: float
    iou: float
    hausdorff: Optional[float]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def _report_table(report, case_id):
    if isinstance(report, CorrectionReport):
        rows = [
            [case_id, angle, d.component_id, d.pixel_count, d.tumor_origin_fraction, d.action,
             d.retained_pixel_count]
            for angle, d in report.rows()
        ]
        meta = {f"config.{k}": v for k, v in report.config.as_dict().items()}
        meta.update(
            tumors_total=report.tumors_total,
            tumors_excluded=report.tumors_excluded,
            tumor_excluded_fraction=report.tumor_excluded_fraction,
            volume_excluded_fraction=report.volume_excluded_fraction,
        )
        return CORRECTION_COLUMNS, rows, meta
    rows = [
        [r.case_id, r.angle_deg, r.dice, r.iou, r.hausdorff, int(r.hausdorff is None)]
        for r in report
    ]
    return SCORE_COLUMNS, rows, {}


def write_report(report, path, format: str = "csv", meta: Optional[Dict] = None, case_id: str = ""):
    """Write a CorrectionReport or a list of ScoreRow.

    CSV output starts with ``# key: value`` comment lines carrying configuration
    and summary values, then the header row. ``structured-text`` writes JSON.
    """
    columns, rows, base_meta = _report_table(report, case_id)
    all_meta = dict(base_meta)
    all_meta.update(meta or {})
    if format == "csv":
        with open(path, "w", newline="") as fh:
            for k, v in all_meta.items():
                fh.write(f"# {k}: {fmt(v)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    elif format in ("structured-text", "json"):
        doc = {"meta": all_meta, "columns": columns, "rows": [dict(zip(columns, r)) for r in rows]}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=False, default=float)
            fh.write("\n")
    else:
        raise InvalidParameterError(f"unknown report format {format!r}")


def read_report(path):
    """Parse a CSV report back into ``(meta, rows)``; values stay strings."""
    meta, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    rows = list(csv.DictReader(lines))
    return meta, rows


# --------------------------------------------------------------------------- phantom spec files

def parse_phantom_spec(text: str) -> PhantomSpec:
    """Parse ``key = value`` lines; each ``sphere = kind cx cy cz radius intensity`` adds a sphere."""
    fields = {}
    spheres = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.split()
        if not sep or not value:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        try:
            if key == "sphere":
                if len(value) != 6:
                    raise FormatError(f"line {lineno}: sphere needs kind cx cy cz radius intensity")
                kind = value[0]
                cx, cy, cz, r, inten = (float(v) for v in value[1:])
                spheres.append(SphereSpec((cx, cy, cz), r, inten, kind))
            elif key == "dims":
                fields["dims"] = tuple(int(v) for v in value)
            elif key == "spacing":
                fields["spacing"] = Spacing(*(float(v) for v in value))
            elif key in ("background", "noise_sigma"):
                fields[key] = float(value[0])
            elif key == "seed":
                fields["seed"] = int(value[0])
            else:
                raise FormatError(f"line {lineno}: unknown key {key!r}")
        except FormatError:
            raise
        except (ValueError, TypeError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if "dims" not in fields:
        raise FormatError("missing 'dims'")
    try:
        return PhantomSpec(
            dims=fields["dims"],
            spheres=spheres,
            spacing=fields.get("spacing", Spacing()),
            background_intensity=fields.get("background", 0.0),
            noise_sigma=fields.get("noise_sigma", 0.0),
            seed=fields.get("seed", 0),
        )
    except InvalidParameterError as exc:
        raise FormatError(str(exc)) from None


def read_phantom_spec(path) -> PhantomSpec:
    return parse_phantom_spec(Path(path).read_text())


def format_phantom_spec(spec: PhantomSpec) -> str:
    lines = [
        "dims = " + " ".join(str(d) for d in spec.dims),
        "spacing = " + " ".join(repr(s) for s in spec.spacing.as_tuple()),
        f"background = {spec.background_intensity!r}",
        f"noise_sigma = {spec.noise_sigma!r}",
        f"seed = {spec.seed}",
    ]
    for s in spec.spheres:
        lines.append(f"sphere = {s.kind} " + " ".join(repr(float(v)) for v in (*s.center, s.radius, s.intensity)))
    return "\n".join(lines) + "\n"
