"""Confusion-matrix accumulation and semantic-segmentation scores.

Scoring follows the Cityscapes protocol: one global confusion matrix over
the whole dataset (never per-frame averaging), classes absent from both
reference and prediction excluded from the mIoU mean, and prediction
pixels equal to the ignore ID counted as a miss (false negative) for the
reference class. Counts stay exact integers until the final division.

The matrix is a mergeable accumulator: frames may be accumulated into
thread-local matrices in parallel and merged afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import DataError, LabelMap


class UndefinedMetricError(ValueError):
    """The metric has an empty denominator for every class."""


@dataclass(eq=False)
class ConfusionMatrix:
    """C x C pixel-count accumulator plus ignored and void-predicted tallies.

    ``counts[g][p]`` is the number of pixels with reference class ``g``
    predicted as class ``p``. Pixels whose reference is the ignore ID only
    bump ``ignored_pixels``. Pixels with a valid reference class but an
    ignore-ID prediction land in ``void_fn`` (a synthetic void-prediction
    column folded into each class's false negatives).
    """

    class_count: int
    counts: np.ndarray = None
    void_fn: np.ndarray = None
    ignored_pixels: int = 0

    def __post_init__(self):
        if self.class_count <= 0:
            raise DataError(f"class_count must be positive, got {self.class_count}")
        if self.counts is None:
            self.counts = np.zeros((self.class_count, self.class_count), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.class_count, self.class_count):
                raise DataError(f"counts must be {self.class_count}x{self.class_count}")
        if self.void_fn is None:
            self.void_fn = np.zeros(self.class_count, dtype=np.int64)
        else:
            self.void_fn = np.asarray(self.void_fn, dtype=np.int64)
            if self.void_fn.shape != (self.class_count,):
                raise DataError(f"void_fn must have length {self.class_count}")
        if (self.counts < 0).any() or (self.void_fn < 0).any() or self.ignored_pixels < 0:
            raise DataError("confusion-matrix entries must be non-negative")

    @property
    def total_pixels(self) -> int:
        """Total pixels accumulated, including ignored and void-predicted ones."""
        return int(self.counts.sum()) + int(self.void_fn.sum()) + self.ignored_pixels


def accumulate(cm: ConfusionMatrix, gt: LabelMap, pred: LabelMap) -> ConfusionMatrix:
    """Add one (reference, prediction) pixel raster pair into ``cm`` in place."""
    if gt.labels.shape != pred.labels.shape:
        raise DataError(
            f"dimension mismatch: reference {gt.width}x{gt.height} vs "
            f"prediction {pred.width}x{pred.height}"
        )
    if gt.class_count != cm.class_count or pred.class_count != cm.class_count:
        raise DataError(
            f"class_count mismatch: matrix {cm.class_count}, reference {gt.class_count}, "
            f"prediction {pred.class_count}"
        )
    if gt.ignore_id != pred.ignore_id:
        raise DataError(f"ignore_id mismatch: {gt.ignore_id} vs {pred.ignore_id}")

    c = cm.class_count
    g = gt.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    valid = g != gt.ignore_id
    cm.ignored_pixels += int((~valid).sum())
    gv = g[valid]
    pv = p[valid]
    void = pv == pred.ignore_id
    if void.any():
        cm.void_fn += np.bincount(gv[void], minlength=c)
    gv = gv[~void]
    pv = pv[~void]
    if gv.size:
        cm.counts += np.bincount(gv * c + pv, minlength=c * c).reshape(c, c)
    return cm


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    """Element-wise sum of two accumulators (commutative, identity = empty matrix)."""
    if a.class_count != b.class_count:
        raise DataError(f"class_count mismatch: {a.class_count} vs {b.class_count}")
    return ConfusionMatrix(
        class_count=a.class_count,
        counts=a.counts + b.counts,
        void_fn=a.void_fn + b.void_fn,
        ignored_pixels=a.ignored_pixels + b.ignored_pixels,
    )


def per_class_iou(cm: ConfusionMatrix):
    """IoU per class, or None where TP + FP + FN = 0 (class absent on both sides)."""
    ious = []
    for c in range(cm.class_count):
        tp = int(cm.counts[c, c])
        fn = int(cm.counts[c, :].sum()) - tp + int(cm.void_fn[c])
        fp = int(cm.counts[:, c].sum()) - tp
        denom = tp + fp + fn
        ious.append(tp / denom if denom > 0 else None)
    return ious


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes present in reference or prediction."""
    defined = [v for v in per_class_iou(cm) if v is not None]
    if not defined:
        raise UndefinedMetricError("mIoU undefined: every class is empty")
    return sum(defined) / len(defined)


def oacc(cm: ConfusionMatrix) -> float:
    """Overall pixel accuracy: correctly classified share of non-ignored pixels."""
    denom = int(cm.counts.sum()) + int(cm.void_fn.sum())
    if denom == 0:
        raise UndefinedMetricError("oAcc undefined: no valid pixels accumulated")
    return int(np.trace(cm.counts)) / denom


def frwacc(cm: ConfusionMatrix) -> float:
    """Frequency-weighted IoU: per-class IoU weighted by reference pixel share."""
    freq = cm.counts.sum(axis=1) + cm.void_fn
    total = int(freq.sum())
    if total == 0:
        raise UndefinedMetricError("frwAcc undefined: no valid pixels accumulated")
    ious = per_class_iou(cm)
    acc = 0.0
    for c in range(cm.class_count):
        if freq[c] > 0 and ious[c] is not None:
            acc += (int(freq[c]) / total) * ious[c]
    return acc


def write_csv(cm: ConfusionMatrix, path) -> Path:
    """Export the C x C integer counts for audit (void/ignored tallies excluded)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in cm.counts:
            writer.writerow(int(v) for v in row)
    return path
