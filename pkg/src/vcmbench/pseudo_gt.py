"""Pseudo ground truth: promote predictions on pristine inputs to reference annotations.

A model's output on the uncompressed frame becomes the reference the same
model's output on compressed frames is scored against. By construction
the metric ceiling is exact: scoring a prediction against its own pseudo
ground truth yields the metric maximum (mIoU/oAcc/frwAcc/AP/wAP = 1).

Pseudo-GT artifacts are persisted in the same file formats as true ground
truth, so every downstream operation is oblivious to which mode it runs
in; swapping the reference directory is the only difference between the
two evaluation modes.
"""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence

from .datamodel import (
    DataError,
    DetectionSet,
    FrameRef,
    GtMode,
    Instance,
    InstanceSet,
    LabelMap,
    load_detections,
    load_label_map,
    save_annotations,
    save_label_map,
)

DEFAULT_SCORE_THRESHOLD = 0.5

__all__ = [
    "GtMode",
    "DEFAULT_SCORE_THRESHOLD",
    "semantic_pseudo_gt",
    "instance_pseudo_gt",
    "materialize_pseudo_gt",
]


def semantic_pseudo_gt(pred: LabelMap) -> LabelMap:
    """Promote a semantic prediction raster to reference role (identity transfer)."""
    if (pred.labels == pred.ignore_id).all():
        warnings.warn("pseudo-GT label map is all-ignore", stacklevel=2)
    return LabelMap(pred.labels, class_count=pred.class_count, ignore_id=pred.ignore_id)


def instance_pseudo_gt(
    pred: DetectionSet, score_threshold: float = DEFAULT_SCORE_THRESHOLD
) -> InstanceSet:
    """Keep detections with score >= threshold as score-free instances, order preserved."""
    if not 0.0 <= score_threshold <= 1.0:
        raise DataError(f"score_threshold must be in [0, 1], got {score_threshold}")
    instances = tuple(
        Instance(class_id=d.class_id, bbox=d.bbox, mask=d.mask)
        for d in pred.detections
        if d.score >= score_threshold
    )
    if pred.detections and not instances:
        warnings.warn(
            f"pseudo-GT empty: no detection reached score threshold {score_threshold}",
            stacklevel=2,
        )
    return InstanceSet(frame=pred.frame, instances=instances)


def materialize_pseudo_gt(
    frames: Sequence[FrameRef],
    pristine_pred_dir,
    out_root,
    model_id: str,
    task: str,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    class_count: int = None,
    ignore_id: int = 255,
) -> Path:
    """Write pseudo-GT files for every frame under ``<out_root>/pseudo_gt/<model_id>/``.

    Emitted in the datamodel annotation formats so the reference loader is
    identical in both evaluation modes.
    """
    pristine_pred_dir = Path(pristine_pred_dir)
    out_dir = Path(out_root) / "pseudo_gt" / model_id
    out_dir.mkdir(parents=True, exist_ok=True)
    if task == "semantic":
        if class_count is None:
            raise DataError("semantic pseudo-GT needs class_count")
        for frame in frames:
            pred = load_label_map(
                pristine_pred_dir / f"{frame.stem}.png", class_count, ignore_id
            )
            save_label_map(semantic_pseudo_gt(pred), out_dir / f"{frame.stem}.png")
    elif task == "instance":
        for frame in frames:
            pred = load_detections(pristine_pred_dir / f"{frame.stem}.json", frame)
            save_annotations(
                instance_pseudo_gt(pred, score_threshold), out_dir / f"{frame.stem}.json"
            )
    else:
        raise DataError(f"unknown task {task!r}, expected 'semantic' or 'instance'")
    return out_dir
