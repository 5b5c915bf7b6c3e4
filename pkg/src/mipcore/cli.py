"""Command-line entry point: ``mipcore {project,correct,metrics,phantom,sweep}``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import FormatError, InvalidParameterError
from .io import (
    KIND_INTENSITY, KIND_LABEL, KIND_PROVENANCE, ScoreRow, container_from_stack,
    encode_mip_container, fmt, read_mip_container, read_nifti, read_phantom_spec,
    write_mip_container, write_nifti, write_report,
)
from .metrics import aggregate, segmentation_scores
from .occlusion import OcclusionConfig, connected_components, correct_stack
from .phantom import generate
from .projection import angular_plan, project_labels, project_stack, set_workers
from .volume import Volume3D, VolumeKind

log = logging.getLogger("mipcore")

INTENSITY_FILE = "intensity.mips"
PROVENANCE_FILE = "provenance.mips"
LABELS_FILE = "labels.mips"
CORRECTED_FILE = "corrected_labels.mips"
CORRECTION_REPORT = "correction_report.csv"
SCORES_FILE = "scores.csv"
SWEEP_FILE = "sweep.csv"


class MissingInput(Exception):
    pass


@dataclass
class RunConfig:
    out: Path
    n_mips: int = 16
    interp: str = "linear"
    workers: Optional[int] = None
    seed: Optional[int] = None
    axis_permute: Optional[str] = None
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)


class _Outputs:
    """Tracks files written by a command; removes them all if the command fails."""

    def __init__(self):
        self.paths: List[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def cleanup(self):
        for p in self.paths:
            if p.is_file():
                with contextlib.suppress(OSError):
                    p.unlink()


def _require(path) -> Path:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"input file not found: {p}")
    return p


def _occlusion_config(args) -> OcclusionConfig:
    return OcclusionConfig(
        origin_threshold=args.origin_threshold,
        connectivity=args.connectivity,
        min_fragment_px=args.min_fragment,
        contrast_ratio_min=args.contrast_ratio,
        contrast_ring_radius_px=args.ring_radius,
    )


def _config(args) -> RunConfig:
    cfg = RunConfig(out=Path(args.out))
    for name in ("n", "interp", "workers", "seed", "axis_permute"):
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(cfg, "n_mips" if name == "n" else name, getattr(args, name))
    if hasattr(args, "origin_threshold"):
        cfg.occlusion = _occlusion_config(args)
    return cfg


# --------------------------------------------------------------------------- commands

def project_case(pet_path, labels_path, cfg: RunConfig, outputs: _Outputs, out_dir=None):
    out_dir = Path(out_dir or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pet = read_nifti(_require(pet_path), axis_permute=cfg.axis_permute)
    labels = None
    if labels_path is not None:
        labels = read_nifti(_require(labels_path), VolumeKind.LABEL, cfg.axis_permute)
        if labels.dims != pet.dims:
            raise InvalidParameterError(f"label dims {labels.dims} differ from PET dims {pet.dims}")
    plan = angular_plan(cfg.n_mips)
    t0 = time.perf_counter()
    stack = project_stack(pet, plan, cfg.interp, cfg.workers)
    label_stack = project_labels(labels, plan, cfg.workers) if labels is not None else None
    wall = time.perf_counter() - t0
    write_mip_container(stack, outputs.add(out_dir / INTENSITY_FILE))
    write_mip_container(stack, outputs.add(out_dir / PROVENANCE_FILE), provenance=True)
    if label_stack is not None:
        write_mip_container(label_stack, outputs.add(out_dir / LABELS_FILE))
    rows, cols = stack.images[0].shape
    print(f"n={plan.n} delta_theta={plan.delta_theta:g} canvas={rows}x{cols} wall={wall:.3f}s")
    return stack, label_stack


def cmd_project(args, outputs):
    cfg = _config(args)
    if args.manifest:
        for line in _require(args.manifest).read_text().splitlines():
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if len(parts) not in (2, 3):
                raise FormatError(f"manifest line needs 'case_id pet [labels]': {line!r}")
            case_id, pet = parts[0], parts[1]
            labels = parts[2] if len(parts) == 3 else None
            print(f"{case_id}: ", end="")
            project_case(pet, labels, cfg, outputs, cfg.out / case_id)
        return
    if args.pet is None:
        raise InvalidParameterError("project needs --pet or --manifest")
    project_case(args.pet, args.labels, cfg, outputs)


def _load_kind(path, kind):
    c = read_mip_container(_require(path))
    if c.kind != kind:
        raise FormatError(f"{path}: container kind {c.kind}, expected {kind}")
    return c


def cmd_correct(args, outputs):
    cfg = _config(args)
    inten = _load_kind(args.intensity, KIND_INTENSITY)
    prov = _load_kind(args.provenance, KIND_PROVENANCE)
    lab = _load_kind(args.label_mips, KIND_LABEL)
    labels3d = read_nifti(_require(args.labels), VolumeKind.LABEL, cfg.axis_permute)
    if not (inten.angles == prov.angles == lab.angles):
        raise InvalidParameterError("containers hold different angle sets")
    if not (inten.data.shape == lab.data.shape == prov.data.shape[:3]):
        raise InvalidParameterError(
            f"geometry mismatch: intensity {inten.data.shape}, labels {lab.data.shape}, "
            f"provenance {prov.data.shape[:3]}"
        )
    p = prov.data
    valid = p[..., 0] >= 0
    nx, ny, nz = labels3d.dims
    if valid.any() and (p[valid].max(axis=0) >= np.array([nx, ny, nz])).any():
        raise InvalidParameterError("provenance indices exceed the 3D label volume")
    corrected, report = correct_stack(lab.to_stack(), inten.to_stack(prov), labels3d, cfg.occlusion)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_mip_container(corrected, outputs.add(cfg.out / CORRECTED_FILE))
    write_report(report, outputs.add(cfg.out / CORRECTION_REPORT), meta={"version": __version__},
                 case_id=args.case_id)
    print(
        f"components={sum(len(d) for d in report.decisions)} "
        f"tumors_excluded={report.tumors_excluded}/{report.tumors_total} "
        f"volume_excluded_fraction={report.volume_excluded_fraction:.6g}"
    )


def score_stacks(pred, truth, case_id=""):
    if pred.angles != truth.angles or pred.data.shape != truth.data.shape:
        raise InvalidParameterError("prediction and ground truth containers differ in geometry")
    rows = []
    for k, angle in enumerate(truth.angles):
        s = segmentation_scores(pred.data[k], truth.data[k])
        rows.append(ScoreRow(case_id, angle, s.dice, s.iou, s.hausdorff))
    return rows


def cmd_metrics(args, outputs):
    cfg = _config(args)
    pred = _load_kind(args.pred, KIND_LABEL)
    truth = _load_kind(args.truth, KIND_LABEL)
    rows = score_stacks(pred, truth, args.case_id)
    meta = {
        "version": __version__,
        "pooling": "per-case mean over angles; dataset = mean/std over cases",
        "hausdorff_units": "pixels",
        "empty_pair_convention": "dice=iou=1 when both masks empty",
    }
    for name in ("dice", "iou", "hausdorff"):
        values = [getattr(r, name) for r in rows]
        agg = aggregate(values) if any(v is not None for v in values) else None
        meta[f"{name}_mean"] = agg.mean if agg else None
        meta[f"{name}_std"] = agg.std_dev if agg else None
        if name == "hausdorff":
            meta["hausdorff_undefined_count"] = agg.n_undefined if agg else len(values)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_report(rows, outputs.add(cfg.out / SCORES_FILE), meta=meta)
    print(" ".join(f"{k}={fmt(v) or 'undefined'}" for k, v in meta.items() if k.endswith(("_mean", "_std"))))


def cmd_phantom(args, outputs):
    spec = read_phantom_spec(_require(args.spec))
    if args.seed is not None:
        spec = type(spec)(spec.dims, spec.spheres, spec.spacing, spec.background_intensity,
                          spec.noise_sigma, args.seed)
    pet, labels = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_nifti(pet, outputs.add(out / "pet.nii.gz"))
    write_nifti(labels, outputs.add(out / "labels.nii.gz"))
    print(f"phantom dims={spec.dims} spheres={len(spec.spheres)} -> {out}")


def _parse_n_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidParameterError(f"--n-list must be comma-separated integers, got {text!r}") from None
    if not values:
        raise InvalidParameterError("--n-list is empty")
    if len(set(values)) != len(values):
        raise InvalidParameterError(f"--n-list contains duplicate values: {text}")
    return values


def run_sweep(pet, labels, n_list, cfg: RunConfig, repeats: int = 5):
    """One row per N: projection cost and annotation retention after correction."""
    # compile both kernels before anything is timed
    project_stack(Volume3D(pet.data[:1, :2, :2], pet.spacing), angular_plan(1), cfg.interp, cfg.workers)
    project_labels(Volume3D(labels.data[:1, :2, :2], labels.spacing, VolumeKind.LABEL), angular_plan(1), cfg.workers)
    rows = []
    for n in n_list:
        plan = angular_plan(n)
        times = []
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            stack = project_stack(pet, plan, cfg.interp, cfg.workers)
            label_stack = project_labels(labels, plan, cfg.workers)
            times.append((time.perf_counter() - t0) * 1000.0)
        nbytes = sum(
            len(encode_mip_container(c))
            for c in (container_from_stack(stack), container_from_stack(stack, provenance=True),
                      container_from_stack(label_stack))
        )
        before = sum(connected_components(im.data, cfg.occlusion.connectivity)[1] for im in label_stack.images)
        corrected, report = correct_stack(label_stack, stack, labels, cfg.occlusion)
        after = sum(connected_components(im.data, cfg.occlusion.connectivity)[1] for im in corrected.images)
        rows.append({
            "n": n,
            "delta_theta": plan.delta_theta,
            "wall_ms": statistics.median(times),
            "bytes": nbytes,
            "components_before": before,
            "components_after": after,
            "excluded_tumor_fraction": report.tumor_excluded_fraction,
        })
    return rows


SWEEP_COLUMNS = ["n", "delta_theta", "wall_ms", "bytes", "components_before", "components_after",
                 "excluded_tumor_fraction"]


def write_sweep(rows, path, meta=None):
    with open(path, "w") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {fmt(v)}\n")
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(fmt(r[c]) for c in SWEEP_COLUMNS) + "\n")


def cmd_sweep(args, outputs):
    cfg = _config(args)
    n_list = _parse_n_list(args.n_list)
    if args.phantom:
        spec = read_phantom_spec(_require(args.phantom))
        pet, labels = generate(spec)
    else:
        if args.pet is None or args.labels is None:
            raise InvalidParameterError("sweep needs --phantom, or both --pet and --labels")
        pet = read_nifti(_require(args.pet), axis_permute=cfg.axis_permute)
        labels = read_nifti(_require(args.labels), VolumeKind.LABEL, cfg.axis_permute)
    rows = run_sweep(pet, labels, n_list, cfg, args.repeats)
    cfg.out.mkdir(parents=True, exist_ok=True)
    meta = {"version": __version__, "interp": cfg.interp, "repeats": args.repeats}
    meta.update({f"config.{k}": v for k, v in cfg.occlusion.as_dict().items()})
    write_sweep(rows, outputs.add(cfg.out / SWEEP_FILE), meta)
    for r in rows:
        print(f"n={r['n']} wall_ms={r['wall_ms']:.1f} bytes={r['bytes']} "
              f"components {r['components_before']}->{r['components_after']}")


# --------------------------------------------------------------------------- parser

def _add_occlusion_flags(p):
    d = OcclusionConfig()
    p.add_argument("--origin-threshold", type=float, default=d.origin_threshold)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=d.connectivity)
    p.add_argument("--contrast-ratio", type=float, default=d.contrast_ratio_min)
    p.add_argument("--ring-radius", type=int, default=d.contrast_ring_radius_px)
    p.add_argument("--min-fragment", type=int, default=d.min_fragment_px)


def _add_common(p, projection=True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None, help="kernel threads (default: all)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--axis-permute", default=None, help="e.g. 'y,x,-z' (new x = file y, ...)")
    if projection:
        p.add_argument("--n", type=int, default=16, help="number of MIPs over [0, 180)")
        p.add_argument("--interp", choices=("linear", "nearest"), default="linear")


def build_parser():
    parser = argparse.ArgumentParser(prog="mipcore", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="multi-angle MIPs with provenance")
    p.add_argument("--pet", help="PET volume (.nii / .nii.gz)")
    p.add_argument("--labels", help="binary tumor label volume")
    p.add_argument("--manifest", help="text file with lines 'case_id pet [labels]'")
    _add_common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("correct", help="occlusion-correct annotation MIPs")
    p.add_argument("--intensity", required=True)
    p.add_argument("--provenance", required=True)
    p.add_argument("--label-mips", required=True)
    p.add_argument("--labels", required=True, help="3D label volume the MIPs came from")
    p.add_argument("--case-id", default="")
    _add_common(p, projection=False)
    _add_occlusion_flags(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("metrics", help="Dice / IoU / Hausdorff per angle")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--case-id", default="")
    _add_common(p, projection=False)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("phantom", help="write a sphere phantom as NIfTI")
    p.add_argument("spec", help="phantom spec file")
    _add_common(p, projection=False)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("sweep", help="cost and retention over several MIP counts")
    p.add_argument("--pet")
    p.add_argument("--labels")
    p.add_argument("--phantom", help="phantom spec file instead of --pet/--labels")
    p.add_argument("--n-list", default="16,32,48,64,80")
    p.add_argument("--repeats", type=int, default=5)
    _add_common(p)
    _add_occlusion_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    outputs = _Outputs()
    try:
        set_workers(getattr(args, "workers", None))
        args.func(args, outputs)
    except MissingInput as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, InvalidParameterError, OSError) as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        outputs.cleanup()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
