"""Segmentation and classification scores for 2D masks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidParameterError

# |A|*|B| below which the Hausdorff distance is computed by direct pairing.
BRUTE_FORCE_PAIRS = 4096


@dataclass
class SegScores:
    dice: float
    iou: float
    hausdorff: Optional[float]  # pixels; None when exactly one mask is empty

    @property
    def hd_undefined(self):
        return self.hausdorff is None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidParameterError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class ClassificationScores:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


@dataclass
class AggregateScore:
    mean: float
    std_dev: float
    n: int
    n_undefined: int = 0


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise InvalidParameterError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(a, b) -> float:
    a, b = _pair(a, b)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def _directed_edt(src, dst):
    """max over src pixels of the distance to the nearest dst pixel."""
    _, idx = ndimage.distance_transform_edt(~dst, return_indices=True)
    rows, cols = np.nonzero(src)
    dr = rows - idx[0][rows, cols]
    dc = cols - idx[1][rows, cols]
    return float(np.sqrt((dr * dr + dc * dc).max()))


def _directed_brute(src, dst):
    p = np.argwhere(src)
    q = np.argwhere(dst)
    d2 = ((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min(axis=1).max()))


def hausdorff(a, b) -> Optional[float]:
    """Symmetric Hausdorff distance between foreground pixel sets, in pixels.

    Both empty gives 0.0; exactly one empty gives None (undefined).
    """
    a, b = _pair(a, b)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return None
    directed = _directed_brute if na * nb <= BRUTE_FORCE_PAIRS else _directed_edt
    return max(directed(a, b), directed(b, a))


def segmentation_scores(pred, truth) -> SegScores:
    return SegScores(dice(pred, truth), iou(pred, truth), hausdorff(pred, truth))


def classification_metrics(c: ConfusionCounts) -> ClassificationScores:
    if c.total == 0:
        raise InvalidParameterError("confusion counts are all zero")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None
    if precision is None or recall is None:
        # 2PR/(P+R) reduces to 2tp/(2tp+fp+fn) whenever it is defined
        denom = 2 * c.tp + c.fp + c.fn
        f1 = 2 * c.tp / denom if denom > 0 else None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassificationScores(accuracy, precision, recall, f1)


def aggregate(values: Sequence[Optional[float]]) -> AggregateScore:
    """Mean and population std; ``None`` / NaN entries are skipped and counted."""
    values = list(values)
    defined = [float(v) for v in values if v is not None and not math.isnan(v)]
    if not defined:
        raise InvalidParameterError("cannot aggregate an empty list")
    arr = np.asarray(defined, dtype=np.float64)
    return AggregateScore(float(arr.mean()), float(arr.std()), len(defined), len(values) - len(defined))
