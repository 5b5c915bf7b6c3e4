"""Occlusion correction of projected tumor annotations.

Annotation MIPs mark every pixel whose ray crosses a tumor, even when a
brighter structure on the same ray supplies the displayed intensity. Using the
intensity provenance we keep, per annotated component, only what is actually
visible:

1. detection: fraction of component pixels whose maximum came from a tumor voxel;
2. splitting: below the threshold, keep only those tumor-originated pixels;
3. filtering: drop surviving fragments that are too small or too faint
   relative to their surroundings.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidParameterError
from .projection import MipImage, MipStack, ProvenanceMap
from .volume import Volume3D, VolumeKind

KEPT = "kept"
SPLIT = "split"
REMOVED_OCCLUDED = "removed-occluded"
REMOVED_LOW_CONTRAST = "removed-low-contrast"
REMOVED_SMALL = "removed-small"

LOW_CONTRAST = "low-contrast"
TOO_SMALL = "too-small"


@dataclass(frozen=True)
class OcclusionConfig:
    origin_threshold: float = 0.75
    connectivity: int = 8
    min_fragment_px: int = 4
    contrast_ratio_min: float = 1.15
    contrast_ring_radius_px: int = 3

    def __post_init__(self):
        if not 0 < self.origin_threshold <= 1:
            raise InvalidParameterError(f"origin_threshold must be in (0, 1], got {self.origin_threshold}")
        if self.connectivity not in (4, 8):
            raise InvalidParameterError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.min_fragment_px < 0:
            raise InvalidParameterError("min_fragment_px must be >= 0")
        if not self.contrast_ratio_min >= 1:
            raise InvalidParameterError(f"contrast_ratio_min must be >= 1, got {self.contrast_ratio_min}")
        if self.contrast_ring_radius_px < 1:
            raise InvalidParameterError("contrast_ring_radius_px must be >= 1")

    def as_dict(self):
        return asdict(self)


@dataclass
class ComponentDecision:
    component_id: int
    pixel_count: int
    tumor_origin_fraction: float
    action: str
    retained_pixel_count: int


@dataclass
class CorrectionReport:
    config: OcclusionConfig
    angles: List[float] = field(default_factory=list)
    decisions: List[List[ComponentDecision]] = field(default_factory=list)
    tumors_total: int = 0
    tumors_excluded: int = 0
    tumor_excluded_fraction: float = 0.0
    volume_excluded_fraction: float = 0.0

    def rows(self):
        """Decisions flattened in (angle, component id) order."""
        for angle, decs in zip(self.angles, self.decisions):
            for dec in decs:
                yield angle, dec


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(mask, connectivity: int = 8):
    """Label foreground components 1..n in raster order of first pixel."""
    if connectivity not in _STRUCTURES:
        raise InvalidParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    labeled, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCTURES[connectivity])
    return labeled.astype(np.int32), int(n)


def _provenance_array(provenance):
    return provenance.data if isinstance(provenance, ProvenanceMap) else np.asarray(provenance)


def tumor_origin_mask(provenance, labels3d: Volume3D) -> np.ndarray:
    """Pixels whose maximum was supplied by a voxel labelled tumor."""
    prov = _provenance_array(provenance)
    ix, iy, iz = prov[..., 0], prov[..., 1], prov[..., 2]
    valid = ix >= 0
    out = np.zeros(prov.shape[:2], dtype=bool)
    out[valid] = labels3d.data[iz[valid], iy[valid], ix[valid]] == 1
    return out


def _as_pixel_mask(pixels, shape):
    arr = np.asarray(pixels)
    if arr.dtype == bool and arr.shape == tuple(shape):
        return arr
    mask = np.zeros(shape, dtype=bool)
    if arr.size:
        arr = arr.reshape(-1, 2)
        mask[arr[:, 0], arr[:, 1]] = True
    return mask


def tumor_origin_fraction(component_pixels, provenance, labels3d: Volume3D) -> float:
    """Share of the component's pixels that trace back to tumor voxels.

    ``component_pixels`` is a boolean mask or a sequence of (row, col) pairs.
    """
    prov = _provenance_array(provenance)
    mask = _as_pixel_mask(component_pixels, prov.shape[:2])
    count = int(mask.sum())
    if count == 0:
        raise InvalidParameterError("component is empty")
    origin = tumor_origin_mask(prov, labels3d)
    return float((origin & mask).sum()) / count


def low_contrast_filter(fragment, intensity, cfg: OcclusionConfig, in_field=None):
    """Return ``(keep, reason)``; reason is None, ``"too-small"`` or ``"low-contrast"``.

    Contrast compares the fragment mean with the mean of a chessboard ring of
    ``cfg.contrast_ring_radius_px`` around it, counting in-field pixels only.
    """
    image = intensity.data if isinstance(intensity, MipImage) else np.asarray(intensity)
    frag = _as_pixel_mask(fragment, image.shape)
    size = int(frag.sum())
    if size == 0:
        raise InvalidParameterError("fragment is empty")
    if size < cfg.min_fragment_px:
        return False, TOO_SMALL
    r = cfg.contrast_ring_radius_px
    ring = ndimage.binary_dilation(frag, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool)) & ~frag
    if in_field is not None:
        ring &= in_field
    if not ring.any():
        return True, None
    m_in = float(image[frag].astype(np.float64).mean())
    m_ring = float(image[ring].astype(np.float64).mean())
    if m_in >= cfg.contrast_ratio_min * m_ring:
        return True, None
    return False, LOW_CONTRAST


@dataclass
class SplitResult:
    """Outcome of detection and splitting for one annotated component."""

    component_id: int
    pixel_count: int
    tumor_origin_fraction: float
    action: str  # kept, split or removed-occluded
    retained: np.ndarray  # bool mask of pixels surviving steps 1-2


def detect_and_split(annotation, origin_mask, cfg: OcclusionConfig) -> List[SplitResult]:
    """Steps 1 and 2: threshold test per component, then keep tumor-originated pixels."""
    annotation = np.asarray(annotation, dtype=bool)
    if annotation.shape != origin_mask.shape:
        raise InvalidParameterError("annotation and provenance geometry differ")
    labeled, n = connected_components(annotation, cfg.connectivity)
    results = []
    for cid, sl in enumerate(ndimage.find_objects(labeled), start=1):
        comp = np.zeros(annotation.shape, dtype=bool)
        comp[sl] = labeled[sl] == cid
        count = int(comp.sum())
        won = comp & origin_mask
        fraction = float(won.sum()) / count
        if fraction >= cfg.origin_threshold:
            results.append(SplitResult(cid, count, fraction, KEPT, comp))
        elif won.any():
            results.append(SplitResult(cid, count, fraction, SPLIT, won))
        else:
            results.append(SplitResult(cid, count, fraction, REMOVED_OCCLUDED, won))
    return results


def correct_mask(annotation, origin_mask, intensity, cfg: OcclusionConfig, in_field=None):
    """All three steps on plain arrays. Returns ``(corrected mask, decisions)``."""
    image = intensity.data if isinstance(intensity, MipImage) else np.asarray(intensity)
    if image.shape != np.shape(annotation):
        raise InvalidParameterError("annotation and intensity geometry differ")
    corrected = np.zeros(image.shape, dtype=bool)
    decisions = []
    for res in detect_and_split(annotation, origin_mask, cfg):
        action = res.action
        retained = 0
        reasons = []
        if res.retained.any():
            frags, nfrag = connected_components(res.retained, cfg.connectivity)
            for fid, sl in enumerate(ndimage.find_objects(frags), start=1):
                frag = np.zeros(image.shape, dtype=bool)
                frag[sl] = frags[sl] == fid
                keep, reason = low_contrast_filter(frag, image, cfg, in_field)
                if keep:
                    corrected |= frag
                    retained += int(frag.sum())
                else:
                    reasons.append(reason)
            if retained == 0:
                action = REMOVED_LOW_CONTRAST if LOW_CONTRAST in reasons else REMOVED_SMALL
        decisions.append(
            ComponentDecision(res.component_id, res.pixel_count, res.tumor_origin_fraction, action, retained)
        )
    return corrected, decisions


def correct_mip(annotation_mip: MipImage, intensity_mip: MipImage, provenance: ProvenanceMap,
                labels3d: Volume3D, cfg: Optional[OcclusionConfig] = None):
    """Occlusion-correct one annotation MIP. Returns ``(MipImage, decisions)``."""
    cfg = cfg or OcclusionConfig()
    if not (annotation_mip.shape == intensity_mip.shape == provenance.shape):
        raise InvalidParameterError(
            f"geometry mismatch: annotation {annotation_mip.shape}, intensity {intensity_mip.shape}, "
            f"provenance {provenance.shape}"
        )
    if annotation_mip.angle_deg != intensity_mip.angle_deg:
        raise InvalidParameterError("annotation and intensity MIPs are at different angles")
    origin = tumor_origin_mask(provenance, labels3d)
    corrected, decisions = correct_mask(
        annotation_mip.data.astype(bool), origin, intensity_mip.data, cfg, provenance.in_field
    )
    out = MipImage(corrected.astype(np.uint8), annotation_mip.angle_deg, VolumeKind.LABEL)
    return out, decisions


def exclusion_stats(corrected: MipStack, provenance: Sequence, labels3d: Volume3D):
    """Count 3D tumors with no surviving annotation pixel in any MIP.

    A tumor is a 26-connected component of ``labels3d``. It survives if any of
    its voxels is the provenance source of a corrected annotation pixel.
    Returns ``(tumors_total, tumors_excluded, tumor_fraction, volume_fraction)``.
    """
    structure = ndimage.generate_binary_structure(3, 3)
    tumors, total = ndimage.label(labels3d.data, structure=structure)
    if total == 0:
        return 0, 0, 0.0, 0.0
    seen = np.zeros(total + 1, dtype=bool)
    masks = [im.data for im in corrected.images] if isinstance(corrected, MipStack) else list(corrected)
    for mask, prov in zip(masks, provenance):
        p = _provenance_array(prov)
        sel = (np.asarray(mask) > 0) & (p[..., 0] >= 0)
        ids = tumors[p[sel][:, 2], p[sel][:, 1], p[sel][:, 0]]
        seen[ids] = True
    seen[0] = False
    sizes = np.bincount(tumors.ravel(), minlength=total + 1)
    excluded = ~seen[1:]
    n_excluded = int(excluded.sum())
    volume_fraction = float(sizes[1:][excluded].sum()) / float(sizes[1:].sum())
    return total, n_excluded, n_excluded / total, volume_fraction


def correct_stack(label_stack: MipStack, intensity_stack: MipStack, labels3d: Volume3D,
                  cfg: Optional[OcclusionConfig] = None):
    """Correct every angle and compute dataset-level exclusion statistics."""
    cfg = cfg or OcclusionConfig()
    if intensity_stack.provenance is None:
        raise InvalidParameterError("intensity stack carries no provenance")
    if label_stack.plan.angles != intensity_stack.plan.angles:
        raise InvalidParameterError("label and intensity stacks use different angles")
    report = CorrectionReport(cfg)
    images = []
    for ann, inten, prov in zip(label_stack.images, intensity_stack.images, intensity_stack.provenance):
        out, decisions = correct_mip(ann, inten, prov, labels3d, cfg)
        images.append(out)
        report.angles.append(ann.angle_deg)
        report.decisions.append(decisions)
    corrected = MipStack(label_stack.plan, images, None)
    total, excluded, frac, vfrac = exclusion_stats(corrected, intensity_stack.provenance, labels3d)
    report.tumors_total = total
    report.tumors_excluded = excluded
    report.tumor_excluded_fraction = frac
    report.volume_excluded_fraction = vfrac
    return corrected, report
