"""Deterministic synthetic frames, annotations, and toy predictors.

Desk-scale stand-ins for a labeled dataset and trained networks: frames
are smooth luma ramps with soft-edged blobs of two brightness tiers, true
annotations come from the clean scene, and the "predictors" are fixed
image-processing pipelines (box blur + banding for the semantic task,
threshold + connected components for the instance task). Everything is a
pure function of (sequence_id, frame_index), so runs are reproducible
bit for bit.

The module is also runnable (``python -m vcmbench.synthetic``) so the
experiment plan can invoke the toy predictors through the same external
command hook a real inference script would use.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .datamodel import (
    Detection,
    DetectionSet,
    FrameRef,
    Instance,
    InstanceSet,
    LabelMap,
    RleMask,
    save_annotations,
    save_detections,
    save_label_map,
)
from .yuv import rgb_to_luma

SEMANTIC_CLASSES = 4
INSTANCE_CLASSES = 2
BAND_WIDTH = 64  # luma per semantic band
DETECT_THRESHOLD = 160
BRIGHT_CLASS_THRESHOLD = 218
MIN_COMPONENT_AREA = 16


def _box_mean3(arr: np.ndarray) -> np.ndarray:
    """Integer 3x3 box mean with edge replication (bit-exact everywhere)."""
    padded = np.pad(arr.astype(np.int64), 1, mode="edge")
    acc = np.zeros(arr.shape, dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy : dy + arr.shape[0], dx : dx + arr.shape[1]]
    return acc // 9


def make_scene(sequence_id: str, frame_index: int, width: int = 128, height: int = 96):
    """Clean luma field for one frame: diagonal ramp plus six separated blobs.

    Returns (luma uint8, blob descriptors). Blob peaks sit in two tiers
    (mid ~190 = class 0, bright ~250 = class 1); the background ramp stays
    below the detection threshold so thresholded regions are exactly the
    blob cores and never touch.
    """
    rng = random.Random(f"{sequence_id}:{frame_index}")
    x = np.arange(width)[None, :]
    y = np.arange(height)[:, None]
    base = 30.0 + 120.0 * (x + y) / (width + height - 2)
    field = base.copy()
    centers = [(width * (2 * i + 1) // 6, height * (2 * j + 1) // 4) for j in range(2) for i in range(3)]
    blobs = []
    for k, (cx, cy) in enumerate(centers):
        cx += rng.randint(-3, 3)
        cy += rng.randint(-3, 3)
        radius = 11 + rng.randint(-2, 2)
        bright = k % 2 == 1
        peak = (246 + rng.randint(-4, 4)) if bright else (190 + rng.randint(-4, 4))
        d = np.hypot(x - cx, y - cy)
        profile = peak * np.clip(1.0 - d / radius, 0.0, 1.0) ** 0.7
        field = np.maximum(field, profile)
        blobs.append({"cx": cx, "cy": cy, "radius": radius, "peak": peak, "class_id": int(bright)})
    luma = np.clip(np.rint(field), 0, 255).astype(np.uint8)
    return luma, blobs


def scene_rgb(luma: np.ndarray) -> np.ndarray:
    return np.stack([luma, luma, luma], axis=-1)


def true_semantic_gt(luma: np.ndarray, ignore_id: int = 255) -> LabelMap:
    """Reference banding of the clean luma (no blur): class = band index."""
    bands = np.minimum(luma.astype(np.int64) // BAND_WIDTH, SEMANTIC_CLASSES - 1)
    return LabelMap(bands.astype(np.uint8), class_count=SEMANTIC_CLASSES, ignore_id=ignore_id)


def true_instances(luma: np.ndarray, blobs, frame: FrameRef) -> InstanceSet:
    """Reference instances: thresholded clean blob cores with tier classes."""
    above = luma >= DETECT_THRESHOLD
    x = np.arange(luma.shape[1])[None, :]
    y = np.arange(luma.shape[0])[:, None]
    instances = []
    for blob in blobs:
        d = np.hypot(x - blob["cx"], y - blob["cy"])
        mask = above & (d <= blob["radius"])
        if not mask.any():
            continue
        rows, cols = np.nonzero(mask)
        bbox = (
            float(cols.min()),
            float(rows.min()),
            float(cols.max() - cols.min() + 1),
            float(rows.max() - rows.min() + 1),
        )
        instances.append(
            Instance(class_id=blob["class_id"], bbox=bbox, mask=RleMask.from_array(mask))
        )
    return InstanceSet(frame=frame, instances=tuple(instances))


def toy_semantic_predict(rgb: np.ndarray, ignore_id: int = 255) -> LabelMap:
    """Toy segmentation network: 3x3 box blur then luma banding."""
    blurred = _box_mean3(rgb_to_luma(rgb))
    bands = np.minimum(blurred // BAND_WIDTH, SEMANTIC_CLASSES - 1)
    return LabelMap(bands.astype(np.uint8), class_count=SEMANTIC_CLASSES, ignore_id=ignore_id)


def toy_instance_predict(rgb: np.ndarray, frame: FrameRef) -> DetectionSet:
    """Toy detector: blur, threshold, 8-connected components with masks and scores."""
    luma = rgb_to_luma(rgb)
    blurred = _box_mean3(luma)
    labeled, count = ndimage.label(blurred >= DETECT_THRESHOLD, structure=np.ones((3, 3), int))
    detections = []
    for comp in range(1, count + 1):
        mask = labeled == comp
        area = int(mask.sum())
        if area < MIN_COMPONENT_AREA:
            continue
        rows, cols = np.nonzero(mask)
        bbox = (
            float(cols.min()),
            float(rows.min()),
            float(cols.max() - cols.min() + 1),
            float(rows.max() - rows.min() + 1),
        )
        comp_luma = luma[mask]
        score = min(1.0, float(comp_luma.mean()) / 255.0)
        class_id = 1 if int(comp_luma.max()) >= BRIGHT_CLASS_THRESHOLD else 0
        detections.append(
            Detection(class_id=class_id, score=score, bbox=bbox, mask=RleMask.from_array(mask))
        )
    return DetectionSet(frame=frame, detections=tuple(detections))


def write_demo_dataset(
    root,
    sequences=("seq0",),
    frames_per_sequence: int = 4,
    width: int = 128,
    height: int = 96,
    first_index: int = 0,
):
    """Materialize synthetic frames plus true annotations; returns the FrameRefs."""
    root = Path(root)
    images = root / "images"
    sem_dir = root / "gt" / "semantic"
    inst_dir = root / "gt" / "instance"
    refs = []
    for seq in sequences:
        for offset in range(frames_per_sequence):
            idx = first_index + offset
            luma, blobs = make_scene(seq, idx, width, height)
            frame = FrameRef(
                dataset_id="synthetic-demo",
                sequence_id=seq,
                frame_index=idx,
                image_path=images / f"{seq}_{idx:06d}.png",
                width=width,
                height=height,
            )
            frame.image_path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(scene_rgb(luma)).save(frame.image_path, format="PNG")
            save_label_map(true_semantic_gt(luma), sem_dir / f"{frame.stem}.png")
            save_annotations(true_instances(luma, blobs, frame), inst_dir / f"{frame.stem}.json")
            refs.append(frame)
    return refs


def predict_directory(input_dir, output_dir, task: str):
    """Run the toy predictor over every PNG in a directory (the inference hook)."""
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    pngs = sorted(input_dir.glob("*.png"))
    if not pngs:
        raise FileNotFoundError(f"no PNG frames in {input_dir}")
    for png in pngs:
        with Image.open(png) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
        if task == "semantic":
            save_label_map(toy_semantic_predict(rgb), output_dir / f"{png.stem}.png")
        elif task == "instance":
            seq, _, idx = png.stem.rpartition("_")
            frame = FrameRef(
                dataset_id="synthetic-demo",
                sequence_id=seq,
                frame_index=int(idx),
                image_path=png,
                width=rgb.shape[1],
                height=rgb.shape[0],
            )
            save_detections(toy_instance_predict(rgb, frame), output_dir / f"{png.stem}.json")
        else:
            raise ValueError(f"unknown task {task!r}")
    return len(pngs)


DEMO_ANCHOR_CODEC = "mock-base"
DEMO_TEST_CODEC = "mock-improved"


def prepare_demo(
    workdir,
    qp_ladder=(22, 27, 32, 37),
    gt_modes=("true_gt", "pseudo_gt"),
    frames_per_sequence: int = 4,
) -> Path:
    """Materialize the self-contained demo workspace and return its plan path.

    Two mock codecs compete: the anchor uses the stock quantizer-step curve
    with plain deflate, the test codec a gentler step curve plus the
    delta-filter entropy stage, so it genuinely wins rate at equal quality.
    Predictions come from the toy predictors through the external command
    hook, exactly like a user-supplied inference script would.
    """
    workdir = Path(workdir)
    frames = write_demo_dataset(workdir / "data", frames_per_sequence=frames_per_sequence)
    predictor = (
        f"{sys.executable} -m vcmbench.synthetic --task {{task}} "
        "--input-dir {input_dir} --output-dir {output_dir}"
    )
    plan = {
        "schema_version": 1,
        "dataset": {
            "dataset_id": "synthetic-demo",
            "class_count_semantic": SEMANTIC_CLASSES,
            "class_count_instance": INSTANCE_CLASSES,
            "ignore_id": 255,
            "frames": [
                {
                    "sequence_id": f.sequence_id,
                    "frame_index": f.frame_index,
                    "image": str(f.image_path.relative_to(workdir)),
                    "width": f.width,
                    "height": f.height,
                }
                for f in frames
            ],
            "semantic_gt_dir": "data/gt/semantic",
            "instance_gt_dir": "data/gt/instance",
        },
        "codecs": [
            {
                "codec_id": DEMO_ANCHOR_CODEC,
                "kind": "mock",
                "config_id": "intra",
                "step_divisor": 6.0,
                "entropy": "raw",
            },
            {
                "codec_id": DEMO_TEST_CODEC,
                "kind": "mock",
                "config_id": "intra",
                "step_divisor": 6.5,
                "entropy": "delta",
            },
        ],
        "qp_ladder": list(qp_ladder),
        "gt_modes": list(gt_modes),
        "metrics": [
            {"kind": "miou", "model_id": "toy-seg"},
            {"kind": "oacc", "model_id": "toy-seg"},
            {"kind": "frwacc", "model_id": "toy-seg"},
            {"kind": "wap", "model_id": "toy-det", "match_kind": "mask"},
            {"kind": "wap", "model_id": "toy-det", "match_kind": "box"},
            {"kind": "psnr"},
        ],
        "predictions": {
            "toy-seg": {
                "task": "semantic",
                "root": "preds/toy-seg",
                "command": predictor.format(
                    task="semantic", input_dir="{input_dir}", output_dir="{output_dir}"
                ),
            },
            "toy-det": {
                "task": "instance",
                "root": "preds/toy-det",
                "command": predictor.format(
                    task="instance", input_dir="{input_dir}", output_dir="{output_dir}"
                ),
            },
        },
        "score_threshold": 0.5,
    }
    plan_path = workdir / "plan.json"
    plan_path.write_text(json.dumps(plan, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return plan_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m vcmbench.synthetic", description="toy predictor for demo plans"
    )
    parser.add_argument("--task", required=True, choices=["semantic", "instance"])
    parser.add_argument("--input-dir", required=True)
    parser.add_argument("--output-dir", required=True)
    args = parser.parse_args(argv)
    count = predict_directory(args.input_dir, args.output_dir, args.task)
    print(f"predicted {count} frames", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
