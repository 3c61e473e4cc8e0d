"""Core domain types and file formats for frames, annotations, and predictions.

File conventions:

* Label maps are single-channel 8-bit PNGs, one byte per pixel = class ID.
  Class IDs follow the Cityscapes trainId convention (19 semantic / 8
  instance evaluation classes); 255 is the reserved ignore ID.
* Detections and reference annotations are JSON arrays of objects
  ``{"class_id": int, "score": float, "bbox": [x, y, w, h],
  "mask": {"size": [h, w], "counts": "..."}}``. Annotations carry no
  scores; masks are optional.
* Masks are COCO-style uncompressed RLE: column-major runs of alternating
  0s and 1s, starting with the zero run, serialized as a space-separated
  string of run lengths.

All types are immutable after construction and safe to share across
threads. Out-of-frame boxes are clamped to the frame, not rejected.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

DEFAULT_IGNORE_ID = 255
SEMANTIC_CLASS_COUNT = 19
INSTANCE_CLASS_COUNT = 8


class DataError(ValueError):
    """Malformed or out-of-contract input data."""


class GtMode(str, Enum):
    """Which reference annotations a measurement was made against."""

    TRUE_GT = "true_gt"
    PSEUDO_GT = "pseudo_gt"


@dataclass(frozen=True)
class FrameRef:
    """One evaluated picture: identity, source image, and dimensions.

    ``frame_index`` is the picture order count within the evaluated window
    of ``sequence_id``.
    """

    dataset_id: str
    sequence_id: str
    frame_index: int
    image_path: Path
    width: int
    height: int

    def __post_init__(self):
        if self.frame_index < 0:
            raise DataError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"frame dimensions must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "image_path", Path(self.image_path))

    @property
    def stem(self) -> str:
        """Canonical file stem used for per-frame artifacts."""
        return f"{self.sequence_id}_{self.frame_index:06d}"

    def to_json_obj(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "sequence_id": self.sequence_id,
            "frame_index": self.frame_index,
            "image_path": str(self.image_path),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FrameRef":
        return cls(
            dataset_id=obj["dataset_id"],
            sequence_id=obj["sequence_id"],
            frame_index=int(obj["frame_index"]),
            image_path=Path(obj["image_path"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )


class LabelMap:
    """Per-pixel class-ID raster (ground truth, pseudo ground truth, or prediction).

    Every pixel is either ``ignore_id`` or a class ID < ``class_count``;
    this is validated on construction by a full scan.
    """

    __slots__ = ("labels", "class_count", "ignore_id")

    def __init__(self, labels: np.ndarray, class_count: int, ignore_id: int = DEFAULT_IGNORE_ID):
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.ndim != 2 or labels.size == 0:
            raise DataError(f"label raster must be non-empty 2D, got shape {labels.shape}")
        if class_count <= 0:
            raise DataError(f"class_count must be positive, got {class_count}")
        if 0 <= ignore_id < class_count:
            raise DataError(f"ignore_id {ignore_id} collides with class range [0, {class_count})")
        bad = (labels >= class_count) & (labels != ignore_id)
        if bad.any():
            idx = int(np.flatnonzero(bad.ravel())[0])
            raise DataError(
                f"class ID {int(labels.ravel()[idx])} >= {class_count} at pixel {idx}"
            )
        labels = labels.copy()
        labels.setflags(write=False)
        self.labels = labels
        self.class_count = class_count
        self.ignore_id = ignore_id

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.ignore_id == other.ignore_id
            and self.labels.shape == other.labels.shape
            and bool(np.array_equal(self.labels, other.labels))
        )

    def __repr__(self) -> str:
        return f"LabelMap({self.width}x{self.height}, C={self.class_count}, ignore={self.ignore_id})"


@dataclass(frozen=True)
class RleMask:
    """Binary raster as uncompressed column-major RLE (runs of 0s/1s, zero run first)."""

    height: int
    width: int
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.height <= 0 or self.width <= 0:
            raise DataError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        if any(c < 0 for c in counts):
            raise DataError("RLE run lengths must be non-negative")
        if sum(counts) != self.height * self.width:
            raise DataError(
                f"RLE runs sum to {sum(counts)}, expected {self.height * self.width} pixels"
            )

    @classmethod
    def from_array(cls, mask: np.ndarray) -> "RleMask":
        mask = np.asarray(mask).astype(bool)
        if mask.ndim != 2:
            raise DataError(f"mask must be 2D, got shape {mask.shape}")
        flat = mask.flatten(order="F").astype(np.uint8)
        changes = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], changes, [flat.size]])
        runs = np.diff(bounds).tolist()
        if flat[0] == 1:
            runs = [0] + runs
        return cls(height=mask.shape[0], width=mask.shape[1], counts=tuple(runs))

    def decode(self) -> np.ndarray:
        flat = np.zeros(self.height * self.width, dtype=bool)
        pos = 0
        value = False
        for run in self.counts:
            if value:
                flat[pos : pos + run] = True
            pos += run
            value = not value
        return flat.reshape((self.height, self.width), order="F")

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def to_json_obj(self) -> dict:
        return {"size": [self.height, self.width], "counts": " ".join(str(c) for c in self.counts)}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "RleMask":
        try:
            h, w = (int(v) for v in obj["size"])
            raw = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed RLE mask object: {obj!r}") from exc
        if isinstance(raw, str):
            counts = tuple(int(tok) for tok in raw.split())
        else:
            counts = tuple(int(c) for c in raw)
        return cls(height=h, width=w, counts=counts)


@dataclass(frozen=True)
class Detection:
    """One scored prediction: class, confidence, box, optional mask."""

    class_id: int
    score: float
    bbox: tuple  # (x, y, w, h) in pixels
    mask: Optional[RleMask] = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.class_id < 0:
            raise DataError(f"class_id must be >= 0, got {self.class_id}")
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"score out of range [0, 1]: {self.score}")
        _check_bbox(self.bbox)


@dataclass(frozen=True)
class Instance:
    """One score-free reference instance."""

    class_id: int
    bbox: tuple
    mask: Optional[RleMask] = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.class_id < 0:
            raise DataError(f"class_id must be >= 0, got {self.class_id}")
        _check_bbox(self.bbox)


@dataclass(frozen=True)
class DetectionSet:
    """Ordered scored predictions for one frame."""

    frame: FrameRef
    detections: tuple

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class InstanceSet:
    """Score-free reference instances for one frame."""

    frame: FrameRef
    instances: tuple

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    def __len__(self) -> int:
        return len(self.instances)


@dataclass(frozen=True)
class EvalRecord:
    """One (codec, QP, frame, metric, GT-mode) measurement; the unit of caching.

    ``rate_bits`` is the exact bitstream size in bits for this frame's
    share. ``aux`` carries the per-frame accumulator payload (confusion
    counts, match lists, MSE) that dataset-level aggregation re-folds.
    """

    codec_id: str
    qp: int
    frame: FrameRef
    metric_id: str
    gt_mode: GtMode
    value: float
    rate_bits: int
    aux: Optional[dict] = None

    def __post_init__(self):
        if self.rate_bits < 0:
            raise DataError(f"rate_bits must be >= 0, got {self.rate_bits}")
        object.__setattr__(self, "gt_mode", GtMode(self.gt_mode))

    def to_json_obj(self) -> dict:
        obj = {
            "codec_id": self.codec_id,
            "qp": self.qp,
            "frame": self.frame.to_json_obj(),
            "metric_id": self.metric_id,
            "gt_mode": self.gt_mode.value,
            "value": self.value,
            "rate_bits": self.rate_bits,
        }
        if self.aux is not None:
            obj["aux"] = self.aux
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EvalRecord":
        return cls(
            codec_id=obj["codec_id"],
            qp=int(obj["qp"]),
            frame=FrameRef.from_json_obj(obj["frame"]),
            metric_id=obj["metric_id"],
            gt_mode=GtMode(obj["gt_mode"]),
            value=float(obj["value"]),
            rate_bits=int(obj["rate_bits"]),
            aux=obj.get("aux"),
        )


def _check_bbox(bbox):
    if len(bbox) != 4:
        raise DataError(f"bbox must be [x, y, w, h], got {bbox}")
    x, y, w, h = bbox
    if w < 0 or h < 0:
        raise DataError(f"bbox with negative extent: {bbox}")


def clamp_bbox(bbox, width: int, height: int) -> tuple:
    """Clamp (x, y, w, h) to the frame rectangle; clamped area equals the intersection."""
    x, y, w, h = (float(v) for v in bbox)
    x0 = min(max(x, 0.0), float(width))
    y0 = min(max(y, 0.0), float(height))
    x1 = min(max(x + w, 0.0), float(width))
    y1 = min(max(y + h, 0.0), float(height))
    return (x0, y0, max(x1 - x0, 0.0), max(y1 - y0, 0.0))


# ---------------------------------------------------------------------------
# Loaders / savers
# ---------------------------------------------------------------------------


def load_label_map(path, class_count: int, ignore_id: int = DEFAULT_IGNORE_ID) -> LabelMap:
    """Load a single-channel 8-bit PNG as a validated LabelMap."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"label map file not found: {path}")
    with Image.open(path) as img:
        if img.mode != "L":
            raise DataError(f"label map must be single-channel 8-bit, got mode {img.mode!r}: {path}")
        arr = np.asarray(img, dtype=np.uint8)
    if arr.size == 0:
        raise DataError(f"label map has zero dimension: {path}")
    return LabelMap(arr, class_count=class_count, ignore_id=ignore_id)


def save_label_map(label_map: LabelMap, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(label_map.labels), mode="L").save(path, format="PNG")
    return path


def _load_json_array(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotation file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(records, list):
        raise DataError(f"expected a JSON array in {path}")
    return records


def _clamp_with_warning(bbox, frame: FrameRef, path, index: int) -> tuple:
    clamped = clamp_bbox(bbox, frame.width, frame.height)
    if tuple(float(v) for v in bbox) != clamped:
        warnings.warn(
            f"bbox {list(bbox)} at index {index} in {path} exceeds "
            f"{frame.width}x{frame.height} frame, clamped to {list(clamped)}",
            stacklevel=3,
        )
    return clamped


def _parse_mask(obj: dict, frame: FrameRef, path, index: int) -> Optional[RleMask]:
    if "mask" not in obj or obj["mask"] is None:
        return None
    mask = RleMask.from_json_obj(obj["mask"])
    if (mask.height, mask.width) != (frame.height, frame.width):
        raise DataError(
            f"mask size {mask.width}x{mask.height} at index {index} in {path} "
            f"does not match frame {frame.width}x{frame.height}"
        )
    return mask


def load_detections(path, frame: FrameRef) -> DetectionSet:
    """Load scored predictions from the detection JSON format, in file order."""
    records = _load_json_array(path)
    detections = []
    for i, obj in enumerate(records):
        if not isinstance(obj, dict) or "class_id" not in obj or "bbox" not in obj:
            raise DataError(f"malformed detection record at index {i} in {path}")
        if "score" not in obj:
            raise DataError(f"detection record at index {i} in {path} has no score")
        score = float(obj["score"])
        if not 0.0 <= score <= 1.0:
            raise DataError(f"score out of range [0, 1] at index {i} in {path}: {score}")
        _check_bbox(obj["bbox"])
        bbox = _clamp_with_warning(obj["bbox"], frame, path, i)
        detections.append(
            Detection(
                class_id=int(obj["class_id"]),
                score=score,
                bbox=bbox,
                mask=_parse_mask(obj, frame, path, i),
            )
        )
    return DetectionSet(frame=frame, detections=tuple(detections))


def load_annotations(path, frame: FrameRef) -> InstanceSet:
    """Load score-free reference instances; same format as detections minus scores."""
    records = _load_json_array(path)
    instances = []
    for i, obj in enumerate(records):
        if not isinstance(obj, dict) or "class_id" not in obj or "bbox" not in obj:
            raise DataError(f"malformed annotation record at index {i} in {path}")
        _check_bbox(obj["bbox"])
        bbox = _clamp_with_warning(obj["bbox"], frame, path, i)
        instances.append(
            Instance(
                class_id=int(obj["class_id"]),
                bbox=bbox,
                mask=_parse_mask(obj, frame, path, i),
            )
        )
    return InstanceSet(frame=frame, instances=tuple(instances))


def _detection_obj(det: Detection) -> dict:
    obj = {
        "bbox": [det.bbox[0], det.bbox[1], det.bbox[2], det.bbox[3]],
        "class_id": det.class_id,
        "score": det.score,
    }
    if det.mask is not None:
        obj["mask"] = det.mask.to_json_obj()
    return obj


def _instance_obj(inst: Instance) -> dict:
    obj = {
        "bbox": [inst.bbox[0], inst.bbox[1], inst.bbox[2], inst.bbox[3]],
        "class_id": inst.class_id,
    }
    if inst.mask is not None:
        obj["mask"] = inst.mask.to_json_obj()
    return obj


def _write_canonical_json(objects: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(objects, sort_keys=True, indent=2) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def save_detections(dets: DetectionSet, path) -> Path:
    """Write detections in the canonical JSON form (stable key order)."""
    return _write_canonical_json([_detection_obj(d) for d in dets.detections], path)


def save_annotations(refs: InstanceSet, path) -> Path:
    """Write reference instances in the canonical JSON form (stable key order)."""
    return _write_canonical_json([_instance_obj(r) for r in refs.instances], path)
