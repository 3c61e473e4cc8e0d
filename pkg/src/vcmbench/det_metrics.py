"""Greedy detection matching, 101-point interpolated AP, and frequency-weighted wAP.

Matching follows the COCO convention: detections are processed in strictly
non-increasing score order (ties broken by input order, deterministic) and
each one greedily takes the unmatched same-class reference with the
highest IoU at or above the threshold. AP is the 101-point interpolated
area under the dataset-wide precision-recall curve, averaged over the
IoU-threshold ladder 0.50:0.05:0.95 by default; wAP weights per-class AP
by each class's share of reference instances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .datamodel import DataError, DetectionSet, InstanceSet, RleMask
from .seg_metrics import UndefinedMetricError

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_SAMPLES = 101


def iou_box(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes; 0 when the union is empty."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def iou_mask(a: RleMask, b: RleMask) -> float:
    """Intersection over union of two binary masks; 0 when the union is empty."""
    if (a.height, a.width) != (b.height, b.width):
        raise DataError(
            f"mask dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    da = a.decode()
    db = b.decode()
    inter = int(np.logical_and(da, db).sum())
    union = int(np.logical_or(da, db).sum())
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class DetMatch:
    """One processed detection: its class, score, and matched reference (or FP)."""

    class_id: int
    score: float
    ref_index: Optional[int]  # None = false positive

    @property
    def is_tp(self) -> bool:
        return self.ref_index is not None


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one frame at one IoU threshold."""

    iou_threshold: float
    kind: str  # "box" or "mask"
    detections: tuple  # DetMatch, descending score order
    ref_classes: tuple
    ref_matched: tuple


def _pair_iou(det, ref, kind: str) -> float:
    if kind == "box":
        return iou_box(det.bbox, ref.bbox)
    return iou_mask(det.mask, ref.mask)


def match_detections(
    dets: DetectionSet, refs: InstanceSet, iou_threshold: float, kind: str = "box"
) -> MatchResult:
    """Match one frame's detections against its references at one IoU threshold."""
    if not 0.0 < iou_threshold <= 1.0:
        raise DataError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if kind not in ("box", "mask"):
        raise DataError(f"kind must be 'box' or 'mask', got {kind!r}")
    df, rf = dets.frame, refs.frame
    if (df.dataset_id, df.sequence_id, df.frame_index) != (
        rf.dataset_id,
        rf.sequence_id,
        rf.frame_index,
    ):
        raise DataError(f"detections and references are for different frames: {df} vs {rf}")
    if kind == "mask":
        if any(d.mask is None for d in dets.detections) or any(
            r.mask is None for r in refs.instances
        ):
            raise DataError("kind='mask' requires a mask on every detection and reference")

    order = sorted(range(len(dets.detections)), key=lambda i: (-dets.detections[i].score, i))
    matched = [False] * len(refs.instances)
    results = []
    for i in order:
        det = dets.detections[i]
        best_iou = 0.0
        best_ref = None
        for j, ref in enumerate(refs.instances):
            if matched[j] or ref.class_id != det.class_id:
                continue
            iou = _pair_iou(det, ref, kind)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_ref = j
        if best_ref is not None:
            matched[best_ref] = True
        results.append(DetMatch(class_id=det.class_id, score=det.score, ref_index=best_ref))
    return MatchResult(
        iou_threshold=iou_threshold,
        kind=kind,
        detections=tuple(results),
        ref_classes=tuple(r.class_id for r in refs.instances),
        ref_matched=tuple(matched),
    )


def _interpolated_ap(scored, ref_count: int) -> float:
    """101-point interpolated AP from (score, is_tp) pairs of one class/threshold.

    Precision at recall r is the maximum precision at any recall >= r.
    """
    if not scored:
        return 0.0
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], i))
    tp_cum = 0
    recalls = np.empty(len(order))
    precisions = np.empty(len(order))
    for rank, i in enumerate(order):
        tp_cum += 1 if scored[i][1] else 0
        recalls[rank] = tp_cum / ref_count
        precisions[rank] = tp_cum / (rank + 1)
    # running max from the right = precision envelope
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    grid = np.linspace(0.0, 1.0, RECALL_SAMPLES)
    idx = np.searchsorted(recalls, grid, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def average_precision(all_matches: Sequence[MatchResult], class_id: int, ref_count: int) -> float:
    """Dataset-wide AP for one class, averaged over the IoU thresholds present.

    ``all_matches`` holds one MatchResult per (frame, threshold); detections
    are pooled globally per threshold before the PR curve is built.
    """
    if ref_count < 1:
        raise UndefinedMetricError(
            f"AP undefined for class {class_id}: no reference instances"
        )
    thresholds = sorted({m.iou_threshold for m in all_matches})
    if not thresholds:
        return 0.0
    aps = [
        ap_at_threshold(all_matches, class_id, ref_count, t) for t in thresholds
    ]
    return sum(aps) / len(aps)


def ap_at_threshold(
    all_matches: Sequence[MatchResult], class_id: int, ref_count: int, iou_threshold: float
) -> float:
    """AP for one class at a single IoU threshold."""
    if ref_count < 1:
        raise UndefinedMetricError(
            f"AP undefined for class {class_id}: no reference instances"
        )
    scored = [
        (d.score, d.is_tp)
        for m in all_matches
        if m.iou_threshold == iou_threshold
        for d in m.detections
        if d.class_id == class_id
    ]
    return _interpolated_ap(scored, ref_count)


@dataclass(frozen=True)
class APResult:
    """Per-class AP over an IoU-threshold ladder; classes without references are absent."""

    per_class: dict  # class_id -> mean AP over thresholds
    per_class_by_threshold: dict  # class_id -> {threshold: AP}
    iou_thresholds: tuple
    ref_counts: dict  # class_id -> reference instance count


def evaluate_detections(
    frame_pairs: Sequence,  # (DetectionSet, InstanceSet) pairs
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    kind: str = "box",
) -> APResult:
    """Match every frame at every threshold and fold into per-class dataset AP."""
    matches = []
    ref_counts: dict = {}
    for dets, refs in frame_pairs:
        for inst in refs.instances:
            ref_counts[inst.class_id] = ref_counts.get(inst.class_id, 0) + 1
        for t in iou_thresholds:
            matches.append(match_detections(dets, refs, t, kind=kind))
    per_class = {}
    per_class_by_threshold = {}
    for class_id, count in sorted(ref_counts.items()):
        by_t = {t: ap_at_threshold(matches, class_id, count, t) for t in iou_thresholds}
        per_class_by_threshold[class_id] = by_t
        per_class[class_id] = sum(by_t.values()) / len(by_t)
    return APResult(
        per_class=per_class,
        per_class_by_threshold=per_class_by_threshold,
        iou_thresholds=tuple(iou_thresholds),
        ref_counts=ref_counts,
    )


def class_weights(refs: Iterable[InstanceSet]) -> dict:
    """Per-class weight = share of reference instances over the whole set."""
    counts: dict = {}
    for instance_set in refs:
        for inst in instance_set.instances:
            counts[inst.class_id] = counts.get(inst.class_id, 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise UndefinedMetricError("class weights undefined: no reference instances")
    return {c: n / total for c, n in sorted(counts.items())}


def wap(ap: APResult, weights: dict) -> float:
    """Weighted AP over classes with a defined AP; weights renormalized on that subset."""
    defined = [c for c in ap.per_class if c in weights and weights[c] > 0]
    wsum = sum(weights[c] for c in defined)
    if not defined or wsum == 0:
        raise UndefinedMetricError("wAP undefined: no class with both AP and weight")
    return sum(weights[c] * ap.per_class[c] for c in defined) / wsum


def write_ap_csv(ap: APResult, path) -> Path:
    """Export (class_id, threshold, AP) rows for audit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "iou_threshold", "ap"])
        for class_id in sorted(ap.per_class_by_threshold):
            for t in ap.iou_thresholds:
                writer.writerow([class_id, f"{t:.2f}", f"{ap.per_class_by_threshold[class_id][t]:.6f}"])
    return path
