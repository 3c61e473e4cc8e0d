"""Experiment orchestration: plan parsing, the cached result store, and curve assembly.

A plan enumerates the full evaluation matrix {codec x QP x frame x metric
x GT-mode}. Every cell becomes one JSON record keyed by a content hash,
written idempotently, so reruns of an unchanged plan recompute nothing.
The true-GT and pseudo-GT pipelines execute the identical code path; the
reference annotation directory is the only thing that differs, which a
TraceRecorder can assert.

Aggregation into rate-performance curves follows the dataset protocols:
one global confusion matrix for segmentation metrics, a dataset-wide
globally score-sorted PR curve for detection metrics, and the per-frame
mean for PSNR/VMAF. Curve assembly refuses partial ladders rather than
interpolating around failed cells.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import shlex
import subprocess
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import codec_adapter, det_metrics, pseudo_gt, quality_metrics, seg_metrics
from .bd_metrics import RdCurve
from .datamodel import (
    DataError,
    EvalRecord,
    FrameRef,
    GtMode,
    load_annotations,
    load_detections,
    load_label_map,
)
from .quality_metrics import ImagePair

log = logging.getLogger("vcmbench")

PLAN_SCHEMA_VERSION = 1
QP_LADDER_CTC = (22, 27, 32, 37)
QP_LADDER_HIGH_RATE = (12, 17, 22, 27)

SEG_KINDS = ("miou", "oacc", "frwacc")
DET_KINDS = ("ap", "wap")
QUALITY_KINDS = ("psnr", "vmaf")


class PlanError(ValueError):
    """Invalid experiment plan or unresolvable inputs (a configuration error)."""


class IncompleteLadderError(ValueError):
    """A curve was requested from a store with missing or failed ladder cells."""


@dataclass(frozen=True)
class MetricSpec:
    """One metric column of the evaluation matrix."""

    kind: str
    model_id: str = ""
    match_kind: str = "box"  # detection metrics only

    def __post_init__(self):
        if self.kind not in SEG_KINDS + DET_KINDS + QUALITY_KINDS:
            raise PlanError(f"unknown metric kind {self.kind!r}")
        if self.kind in SEG_KINDS + DET_KINDS and not self.model_id:
            raise PlanError(f"metric {self.kind!r} needs a model_id")
        if self.kind in QUALITY_KINDS and self.model_id:
            raise PlanError(f"metric {self.kind!r} is model-free")
        if self.match_kind not in ("box", "mask"):
            raise PlanError(f"match_kind must be 'box' or 'mask', got {self.match_kind!r}")

    @property
    def metric_id(self) -> str:
        if self.kind in DET_KINDS:
            return f"{self.kind}-{self.match_kind}:{self.model_id}"
        if self.kind in SEG_KINDS:
            return f"{self.kind}:{self.model_id}"
        return self.kind

    @property
    def task(self) -> Optional[str]:
        if self.kind in SEG_KINDS:
            return "semantic"
        if self.kind in DET_KINDS:
            return "instance"
        return None


@dataclass(frozen=True)
class PredictionSource:
    """Where predictions for one model come from.

    ``variant_dir`` maps an input variant ("pristine" or "<codec>:qp<NN>")
    to its directory; explicit entries win over the ``root`` convention
    ``root/pristine`` and ``root/<codec>/qp<NN>``. When ``command`` is set
    it is run per variant with {input_dir}/{output_dir} placeholders to
    produce missing predictions (the harness never embeds inference).
    """

    model_id: str
    task: str
    root: Optional[Path] = None
    variants: dict = field(default_factory=dict)
    command: Optional[str] = None

    def __post_init__(self):
        if self.task not in ("semantic", "instance"):
            raise PlanError(f"prediction source task must be semantic|instance, got {self.task!r}")
        if self.root is None and not self.variants:
            raise PlanError(f"prediction source {self.model_id!r} needs a root or variants map")

    def variant_dir(self, variant: str) -> Path:
        if variant in self.variants:
            return Path(self.variants[variant])
        if self.root is None:
            raise PlanError(f"no prediction directory for {self.model_id!r} variant {variant!r}")
        if variant == "pristine":
            return Path(self.root) / "pristine"
        codec_id, _, qp_tag = variant.partition(":")
        return Path(self.root) / codec_id / qp_tag

    @property
    def extension(self) -> str:
        return ".png" if self.task == "semantic" else ".json"


@dataclass(frozen=True)
class DatasetSpec:
    dataset_id: str
    frames: tuple
    semantic_gt_dir: Optional[Path] = None
    instance_gt_dir: Optional[Path] = None
    class_count_semantic: int = 19
    class_count_instance: int = 8
    ignore_id: int = 255
    fps: Optional[float] = None
    sequence_window: Optional[dict] = None  # {"start", "count", "labeled_index"}

    def __post_init__(self):
        seen = set()
        for frame in self.frames:
            key = (frame.sequence_id, frame.frame_index)
            if key in seen:
                raise PlanError(f"duplicate frame_index {key} in dataset")
            seen.add(key)
        if not self.frames:
            raise PlanError("dataset has no frames")


@dataclass(frozen=True)
class ExperimentPlan:
    """The full evaluation matrix specification."""

    dataset: DatasetSpec
    codecs: tuple
    qp_ladder: tuple
    gt_modes: tuple
    metrics: tuple
    predictions: dict = field(default_factory=dict)
    vmaf_scores: dict = field(default_factory=dict)
    score_threshold: float = pseudo_gt.DEFAULT_SCORE_THRESHOLD
    iou_thresholds: tuple = det_metrics.DEFAULT_IOU_THRESHOLDS
    raw: Optional[dict] = None

    def __post_init__(self):
        if not self.qp_ladder:
            raise PlanError("qp_ladder must be non-empty")
        if list(self.qp_ladder) != sorted(set(self.qp_ladder)):
            raise PlanError(f"qp_ladder must be strictly increasing, got {list(self.qp_ladder)}")
        if not self.gt_modes:
            raise PlanError("at least one GT mode is required")
        if not self.codecs:
            raise PlanError("at least one codec is required")
        if not self.metrics:
            raise PlanError("at least one metric is required")
        ids = [c.codec_id for c in self.codecs]
        if len(set(ids)) != len(ids):
            raise PlanError(f"duplicate codec_id in {ids}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise PlanError(f"score_threshold must be in [0, 1], got {self.score_threshold}")
        for metric in self.metrics:
            if metric.task is not None and metric.model_id not in self.predictions:
                raise PlanError(f"metric {metric.metric_id} references unknown model {metric.model_id!r}")
            if metric.task is not None and self.predictions[metric.model_id].task != metric.task:
                raise PlanError(
                    f"metric {metric.metric_id} needs a {metric.task} model, but "
                    f"{metric.model_id!r} is {self.predictions[metric.model_id].task}"
                )
            if metric.kind == "vmaf":
                missing = [
                    f"{c.codec_id}:qp{qp:02d}"
                    for c in self.codecs
                    for qp in self.qp_ladder
                    if f"{c.codec_id}:qp{qp:02d}" not in self.vmaf_scores
                ]
                if missing:
                    raise PlanError(f"vmaf metric requested but scores missing for {missing}")

    @property
    def plan_hash(self) -> str:
        payload = self.raw if self.raw is not None else {"fallback": repr(self)}
        digest = hashlib.sha256(
            json.dumps(payload, sort_keys=True, default=str).encode()
        ).hexdigest()
        return digest[:16]

    def codec_by_id(self, codec_id: str):
        for codec in self.codecs:
            if codec.codec_id == codec_id:
                return codec
        raise PlanError(f"unknown codec_id {codec_id!r}")


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def plan_from_dict(obj: dict, base_dir) -> ExperimentPlan:
    """Build a validated plan from a parsed JSON document; paths resolve against base_dir."""
    base_dir = Path(base_dir)
    if not isinstance(obj, dict):
        raise PlanError("plan must be a JSON object")
    if obj.get("schema_version") != PLAN_SCHEMA_VERSION:
        raise PlanError(
            f"unsupported plan schema_version {obj.get('schema_version')!r}, "
            f"expected {PLAN_SCHEMA_VERSION}"
        )
    try:
        ds = obj["dataset"]
        frames = tuple(
            FrameRef(
                dataset_id=ds["dataset_id"],
                sequence_id=f["sequence_id"],
                frame_index=int(f["frame_index"]),
                image_path=_resolve(base_dir, f["image"]),
                width=int(f["width"]),
                height=int(f["height"]),
            )
            for f in ds["frames"]
        )
        dataset = DatasetSpec(
            dataset_id=ds["dataset_id"],
            frames=frames,
            semantic_gt_dir=_resolve(base_dir, ds["semantic_gt_dir"]) if ds.get("semantic_gt_dir") else None,
            instance_gt_dir=_resolve(base_dir, ds["instance_gt_dir"]) if ds.get("instance_gt_dir") else None,
            class_count_semantic=int(ds.get("class_count_semantic", 19)),
            class_count_instance=int(ds.get("class_count_instance", 8)),
            ignore_id=int(ds.get("ignore_id", 255)),
            fps=float(ds["fps"]) if ds.get("fps") else None,
            sequence_window=ds.get("sequence_window"),
        )
        codecs = []
        for c in obj["codecs"]:
            kind = c.get("kind", "external")
            if kind == "mock":
                codecs.append(
                    codec_adapter.MockCodecSpec(
                        codec_id=c["codec_id"],
                        config_id=c.get("config_id", "intra"),
                        qp_offset=int(c.get("qp_offset", 0)),
                        step_divisor=float(c.get("step_divisor", 6.0)),
                        entropy=c.get("entropy", "raw"),
                    )
                )
            elif kind == "external":
                codecs.append(
                    codec_adapter.CodecSpec(
                        codec_id=c["codec_id"],
                        encode_template=c["encode_template"],
                        decode_template=c["decode_template"],
                        config_id=c.get("config_id", "intra"),
                        pixel_format=c.get("pixel_format", "yuv420p8"),
                    )
                )
            else:
                raise PlanError(f"unknown codec kind {kind!r}")
        metrics = tuple(
            MetricSpec(
                kind=m["kind"],
                model_id=m.get("model_id", ""),
                match_kind=m.get("match_kind", "box"),
            )
            for m in obj["metrics"]
        )
        predictions = {}
        for model_id, p in obj.get("predictions", {}).items():
            predictions[model_id] = PredictionSource(
                model_id=model_id,
                task=p["task"],
                root=_resolve(base_dir, p["root"]) if p.get("root") else None,
                variants={k: _resolve(base_dir, v) for k, v in p.get("variants", {}).items()},
                command=p.get("command"),
            )
        plan = ExperimentPlan(
            dataset=dataset,
            codecs=tuple(codecs),
            qp_ladder=tuple(int(q) for q in obj["qp_ladder"]),
            gt_modes=tuple(GtMode(m) for m in obj["gt_modes"]),
            metrics=metrics,
            predictions=predictions,
            vmaf_scores={k: _resolve(base_dir, v) for k, v in obj.get("vmaf_scores", {}).items()},
            score_threshold=float(obj.get("score_threshold", pseudo_gt.DEFAULT_SCORE_THRESHOLD)),
            iou_thresholds=tuple(obj.get("iou_thresholds") or det_metrics.DEFAULT_IOU_THRESHOLDS),
            raw=obj,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PlanError):
            raise
        raise PlanError(f"malformed plan: {exc!r}") from exc
    return plan


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    if not path.is_file():
        raise PlanError(f"plan file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PlanError(f"malformed plan JSON in {path}: {exc}") from exc
    return plan_from_dict(obj, path.parent)


# ---------------------------------------------------------------------------
# Result store
# ---------------------------------------------------------------------------


def cell_key(
    codec_id: str,
    config_id: str,
    qp: int,
    frame: FrameRef,
    metric_id: str,
    gt_mode: GtMode,
    model_id: str = "",
) -> str:
    """Content hash identifying one matrix cell."""
    payload = json.dumps(
        {
            "codec_id": codec_id,
            "config_id": config_id,
            "qp": qp,
            "dataset_id": frame.dataset_id,
            "sequence_id": frame.sequence_id,
            "frame_index": frame.frame_index,
            "metric_id": metric_id,
            "gt_mode": GtMode(gt_mode).value,
            "model_id": model_id,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


@dataclass
class RunStats:
    computed: int = 0
    cached: int = 0
    failed: list = field(default_factory=list)  # (cell description, error string)


class ResultStore:
    """Append-only store of EvalRecords, one JSON file per cell under records/.

    Writes are atomic and idempotent: an existing key is never rewritten
    unless explicitly overwritten, so a key's value never changes.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.run_stats: Optional[RunStats] = None

    def _path(self, key: str) -> Path:
        return self.records_dir / f"{key}.json"

    def has(self, key: str) -> bool:
        return self._path(key).is_file()

    def get(self, key: str) -> Optional[EvalRecord]:
        path = self._path(key)
        if not path.is_file():
            return None
        return EvalRecord.from_json_obj(json.loads(path.read_text(encoding="utf-8")))

    def put(self, key: str, record: EvalRecord, overwrite: bool = False) -> bool:
        """Write a record atomically; returns False when the key already existed."""
        path = self._path(key)
        if path.is_file() and not overwrite:
            return False
        tmp = path.with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(json.dumps(record.to_json_obj(), sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)
        return True

    def iter_records(self):
        for path in sorted(self.records_dir.glob("*.json")):
            yield EvalRecord.from_json_obj(json.loads(path.read_text(encoding="utf-8")))

    def write_manifest(self, manifest: dict):
        (self.root / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    def read_manifest(self) -> dict:
        path = self.root / "manifest.json"
        if not path.is_file():
            raise DataError(f"store has no manifest: {path}")
        return json.loads(path.read_text(encoding="utf-8"))


class TraceRecorder:
    """Records the operation sequence per GT mode for the symmetry assertion."""

    def __init__(self):
        self._events = defaultdict(list)  # mode -> [(cell, op)]
        self._lock = threading.Lock()

    def record(self, mode: GtMode, cell: str, op: str):
        with self._lock:
            self._events[GtMode(mode).value].append((cell, op))

    def sequence(self, mode: GtMode):
        """Deterministic (cell, op) sequence: sorted by cell, op order preserved."""
        events = self._events.get(GtMode(mode).value, [])
        order = defaultdict(list)
        for cell, op in events:
            order[cell].append(op)
        return tuple((cell, op) for cell in sorted(order) for op in order[cell])


# ---------------------------------------------------------------------------
# Run
# ---------------------------------------------------------------------------


def _variant_key(codec_id: str, qp: int) -> str:
    return f"{codec_id}:qp{qp:02d}"


def _needed_models(plan: ExperimentPlan):
    return sorted({m.model_id for m in plan.metrics if m.task is not None})


def _check_inputs(plan: ExperimentPlan):
    """Fail with the full missing-file list before any codec run."""
    missing = []
    for frame in plan.dataset.frames:
        if not frame.image_path.is_file():
            missing.append(str(frame.image_path))
    needs_semantic_gt = GtMode.TRUE_GT in plan.gt_modes and any(
        m.kind in SEG_KINDS for m in plan.metrics
    )
    needs_instance_gt = GtMode.TRUE_GT in plan.gt_modes and any(
        m.kind in DET_KINDS for m in plan.metrics
    )
    if needs_semantic_gt:
        if plan.dataset.semantic_gt_dir is None:
            raise PlanError("true-GT semantic metrics need dataset.semantic_gt_dir")
        missing += [
            str(plan.dataset.semantic_gt_dir / f"{f.stem}.png")
            for f in plan.dataset.frames
            if not (plan.dataset.semantic_gt_dir / f"{f.stem}.png").is_file()
        ]
    if needs_instance_gt:
        if plan.dataset.instance_gt_dir is None:
            raise PlanError("true-GT detection metrics need dataset.instance_gt_dir")
        missing += [
            str(plan.dataset.instance_gt_dir / f"{f.stem}.json")
            for f in plan.dataset.frames
            if not (plan.dataset.instance_gt_dir / f"{f.stem}.json").is_file()
        ]
    for model_id in _needed_models(plan):
        source = plan.predictions[model_id]
        if source.command is not None:
            continue  # generated on demand through the hook
        variants = []
        if GtMode.PSEUDO_GT in plan.gt_modes:
            variants.append("pristine")
        variants += [_variant_key(c.codec_id, qp) for c in plan.codecs for qp in plan.qp_ladder]
        for variant in variants:
            directory = source.variant_dir(variant)
            missing += [
                str(directory / f"{f.stem}{source.extension}")
                for f in plan.dataset.frames
                if not (directory / f"{f.stem}{source.extension}").is_file()
            ]
    for key, path in plan.vmaf_scores.items():
        if not Path(path).is_file():
            missing.append(str(path))
    if missing:
        raise PlanError(
            f"{len(missing)} required input file(s) missing:\n  " + "\n  ".join(missing)
        )


def _run_prediction_command(source: PredictionSource, input_dir: Path, output_dir: Path, log_dir: Path):
    mapping = {"input_dir": str(input_dir), "output_dir": str(output_dir)}
    argv = [arg.format_map(mapping) for arg in shlex.split(source.command)]
    output_dir.mkdir(parents=True, exist_ok=True)
    proc = subprocess.run(argv, capture_output=True, text=True)
    log_dir.mkdir(parents=True, exist_ok=True)
    (log_dir / f"predict_{source.model_id}_{output_dir.name}.log").write_text(
        f"$ {' '.join(argv)}\n--- stdout ---\n{proc.stdout}\n--- stderr ---\n{proc.stderr}\n"
    )
    if proc.returncode != 0:
        raise RuntimeError(
            f"prediction command for {source.model_id} failed ({proc.returncode}): "
            f"{proc.stderr.strip()}"
        )


def _ensure_predictions(plan, source: PredictionSource, variant: str, input_dir: Path, workdir: Path):
    """Make sure prediction files exist for one (model, variant); run the hook if needed."""
    directory = source.variant_dir(variant)
    expected = [directory / f"{f.stem}{source.extension}" for f in plan.dataset.frames]
    if all(p.is_file() for p in expected):
        return directory
    if source.command is None:
        missing = [str(p) for p in expected if not p.is_file()]
        raise PlanError(f"missing prediction files for {source.model_id}/{variant}: {missing}")
    _run_prediction_command(source, input_dir, directory, workdir / "logs")
    still_missing = [str(p) for p in expected if not p.is_file()]
    if still_missing:
        raise RuntimeError(
            f"prediction command for {source.model_id}/{variant} left files missing: {still_missing}"
        )
    return directory


def _frame_bits(enc: dict, frame_pos: int, frame_count: int) -> int:
    if enc.get("per_frame_bits") is not None:
        return int(enc["per_frame_bits"][frame_pos])
    total = 8 * int(enc["bitstream_bytes"])
    base, remainder = divmod(total, frame_count)
    return base + (1 if frame_pos < remainder else 0)


def _reference_dir(plan, workdir: Path, metric: MetricSpec, mode: GtMode) -> Path:
    if mode is GtMode.PSEUDO_GT:
        return workdir / "pseudo_gt" / metric.model_id
    if metric.task == "semantic":
        return plan.dataset.semantic_gt_dir
    return plan.dataset.instance_gt_dir


def _evaluate_cell(
    plan: ExperimentPlan,
    workdir: Path,
    codec,
    qp: int,
    frame: FrameRef,
    frame_pos: int,
    metric: MetricSpec,
    mode: GtMode,
    enc: dict,
    vmaf_cache: dict,
    trace: Optional[TraceRecorder],
) -> EvalRecord:
    """Score one matrix cell. Identical code path for both GT modes."""
    cell = f"{metric.metric_id}|{codec.codec_id}|qp{qp:02d}|{frame.stem}"

    def note(op: str):
        if trace is not None:
            trace.record(mode, cell, op)

    rate_bits = _frame_bits(enc, frame_pos, len(plan.dataset.frames))
    aux: dict
    if metric.kind in SEG_KINDS:
        ref_dir = _reference_dir(plan, workdir, metric, mode)
        note("load_reference:semantic")
        ref = load_label_map(
            ref_dir / f"{frame.stem}.png",
            plan.dataset.class_count_semantic,
            plan.dataset.ignore_id,
        )
        note("load_prediction:semantic")
        source = plan.predictions[metric.model_id]
        pred = load_label_map(
            source.variant_dir(_variant_key(codec.codec_id, qp)) / f"{frame.stem}.png",
            plan.dataset.class_count_semantic,
            plan.dataset.ignore_id,
        )
        note("accumulate_confusion")
        cm = seg_metrics.accumulate(
            seg_metrics.ConfusionMatrix(plan.dataset.class_count_semantic), ref, pred
        )
        note(f"score:{metric.kind}")
        value = getattr(seg_metrics, metric.kind)(cm)
        aux = {
            "counts": cm.counts.tolist(),
            "void_fn": cm.void_fn.tolist(),
            "ignored_pixels": cm.ignored_pixels,
        }
    elif metric.kind in DET_KINDS:
        ref_dir = _reference_dir(plan, workdir, metric, mode)
        note("load_reference:instance")
        refs = load_annotations(ref_dir / f"{frame.stem}.json", frame)
        note("load_prediction:instance")
        source = plan.predictions[metric.model_id]
        dets = load_detections(
            source.variant_dir(_variant_key(codec.codec_id, qp)) / f"{frame.stem}.json", frame
        )
        note("match_detections")
        matches = [
            det_metrics.match_detections(dets, refs, t, kind=metric.match_kind)
            for t in plan.iou_thresholds
        ]
        note(f"score:{metric.kind}")
        ap_result = det_metrics.evaluate_detections(
            [(dets, refs)], iou_thresholds=plan.iou_thresholds, kind=metric.match_kind
        )
        if metric.kind == "wap":
            value = det_metrics.wap(ap_result, det_metrics.class_weights([refs]))
        else:
            value = sum(ap_result.per_class.values()) / len(ap_result.per_class)
        aux = {
            "matches": {
                f"{m.iou_threshold:.2f}": [
                    [d.class_id, d.score, d.is_tp] for d in m.detections
                ]
                for m in matches
            },
            "ref_counts": {str(c): n for c, n in sorted(ap_result.ref_counts.items())},
        }
    elif metric.kind == "psnr":
        note("load_reference:image")
        ref_img = codec_adapter._load_frame_rgb(frame)
        note("load_prediction:image")
        decoded = Path(enc["decoded"][frame_pos])
        from PIL import Image  # local import keeps module load light

        with Image.open(decoded) as img:
            dist = np.asarray(img.convert("RGB"), dtype=np.uint8)
        note("score:psnr")
        pair = ImagePair(reference=ref_img, distorted=dist)
        value = quality_metrics.psnr(pair)
        aux = {"mse": quality_metrics.mse(pair)}
    elif metric.kind == "vmaf":
        note("load_scores:vmaf")
        key = _variant_key(codec.codec_id, qp)
        if key not in vmaf_cache:
            vmaf_cache[key] = quality_metrics.ingest_vmaf(plan.vmaf_scores[key])
        scores = vmaf_cache[key]
        if frame_pos not in scores:
            raise DataError(f"VMAF output for {key} has no frame {frame_pos}")
        note("score:vmaf")
        value = scores[frame_pos]
        aux = {}
    else:  # pragma: no cover - MetricSpec already validates
        raise PlanError(f"unknown metric kind {metric.kind!r}")

    return EvalRecord(
        codec_id=codec.codec_id,
        qp=qp,
        frame=frame,
        metric_id=metric.metric_id,
        gt_mode=mode,
        value=value,
        rate_bits=rate_bits,
        aux=aux,
    )


def encode_all(plan: ExperimentPlan, workdir, jobs: int = 1, use_cache: bool = True):
    """Encode stage for every (codec, QP); returns (results, errors) keyed by pair.

    Each pair owns a private workdir with an ``encode_result.json`` marker
    that doubles as the cache.
    """
    workdir = Path(workdir)
    frames = plan.dataset.frames
    encode_results: dict = {}
    encode_errors: dict = {}

    def _encode(codec, qp):
        enc_dir = workdir / "encodes" / codec.codec_id / f"qp{qp:02d}"
        marker = enc_dir / "encode_result.json"
        if use_cache and marker.is_file():
            return json.loads(marker.read_text(encoding="utf-8"))
        result = codec_adapter.encode_decode(codec, frames, qp, enc_dir)
        payload = {
            "bitstream_bytes": result.bitstream_bytes,
            "per_frame_bits": list(result.per_frame_bits) if result.per_frame_bits else None,
            "decoded": [str(p) for p in result.decoded_frames],
            "wall_time": result.wall_time,
            "qp": qp,
        }
        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
        return payload

    pairs = [(codec, qp) for codec in plan.codecs for qp in plan.qp_ladder]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {pool.submit(_encode, codec, qp): (codec, qp) for codec, qp in pairs}
        for future, (codec, qp) in futures.items():
            try:
                encode_results[(codec.codec_id, qp)] = future.result()
            except Exception as exc:  # noqa: BLE001 - cell failure, run continues
                encode_errors[(codec.codec_id, qp)] = str(exc)
                log.error("encode failed for %s qp=%d: %s", codec.codec_id, qp, exc)
    return encode_results, encode_errors


def run(
    plan: ExperimentPlan,
    workdir,
    jobs: int = 1,
    use_cache: bool = True,
    trace: Optional[TraceRecorder] = None,
) -> ResultStore:
    """Execute the full matrix; returns the store with ``run_stats`` attached.

    Failed cells are recorded in the manifest and skipped by curve
    assembly; they do not abort the run. Missing input files abort before
    any codec runs.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    _check_inputs(plan)
    store = ResultStore(workdir / "results" / plan.plan_hash)
    stats = RunStats()
    frames = plan.dataset.frames

    encode_results, encode_errors = encode_all(plan, workdir, jobs=jobs, use_cache=use_cache)

    # prediction stage (pristine + every decoded variant)
    prediction_errors: dict = {}
    for model_id in _needed_models(plan):
        source = plan.predictions[model_id]
        variant_jobs = []
        if GtMode.PSEUDO_GT in plan.gt_modes:
            variant_jobs.append(("pristine", frames[0].image_path.parent))
        for codec in plan.codecs:
            for qp in plan.qp_ladder:
                enc = encode_results.get((codec.codec_id, qp))
                if enc is None:
                    continue
                variant_jobs.append(
                    (_variant_key(codec.codec_id, qp), Path(enc["decoded"][0]).parent)
                )
        for variant, input_dir in variant_jobs:
            try:
                _ensure_predictions(plan, source, variant, input_dir, workdir)
            except PlanError:
                raise
            except Exception as exc:  # noqa: BLE001
                prediction_errors[(model_id, variant)] = str(exc)
                log.error("predictions failed for %s/%s: %s", model_id, variant, exc)

    # pseudo-GT stage
    if GtMode.PSEUDO_GT in plan.gt_modes:
        for model_id in _needed_models(plan):
            source = plan.predictions[model_id]
            out_dir = workdir / "pseudo_gt" / model_id
            expected = [out_dir / f"{f.stem}{source.extension}" for f in frames]
            if use_cache and all(p.is_file() for p in expected):
                continue
            if (model_id, "pristine") in prediction_errors:
                continue
            pseudo_gt.materialize_pseudo_gt(
                frames,
                source.variant_dir("pristine"),
                workdir,
                model_id,
                source.task,
                score_threshold=plan.score_threshold,
                class_count=plan.dataset.class_count_semantic,
                ignore_id=plan.dataset.ignore_id,
            )

    # evaluation stage
    vmaf_cache: dict = {}
    cells = []
    for metric in plan.metrics:
        for codec in plan.codecs:
            for qp in plan.qp_ladder:
                for frame_pos, frame in enumerate(frames):
                    for mode in plan.gt_modes:
                        cells.append((metric, codec, qp, frame, frame_pos, mode))

    def _cell_id(metric, codec, qp, frame, mode):
        return f"{metric.metric_id}|{codec.codec_id}|qp{qp:02d}|{frame.stem}|{mode.value}"

    def _evaluate(entry):
        metric, codec, qp, frame, frame_pos, mode = entry
        key = cell_key(
            codec.codec_id, codec.config_id, qp, frame, metric.metric_id, mode, metric.model_id
        )
        if use_cache and store.has(key):
            return ("cached", None, None)
        enc = encode_results.get((codec.codec_id, qp))
        if enc is None:
            return (
                "failed",
                _cell_id(metric, codec, qp, frame, mode),
                f"encode failed: {encode_errors.get((codec.codec_id, qp), 'unknown')}",
            )
        if metric.task is not None:
            variant = _variant_key(codec.codec_id, qp)
            if (metric.model_id, variant) in prediction_errors or (
                mode is GtMode.PSEUDO_GT
                and (metric.model_id, "pristine") in prediction_errors
            ):
                return (
                    "failed",
                    _cell_id(metric, codec, qp, frame, mode),
                    "prediction stage failed",
                )
        try:
            record = _evaluate_cell(
                plan, workdir, codec, qp, frame, frame_pos, metric, mode, vmaf_cache, trace
            )
        except Exception as exc:  # noqa: BLE001 - cell failure, run continues
            return ("failed", _cell_id(metric, codec, qp, frame, mode), str(exc))
        store.put(key, record, overwrite=not use_cache)
        return ("computed", None, None)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(_evaluate, cells))
    for outcome, cell_id, error in outcomes:
        if outcome == "cached":
            stats.cached += 1
        elif outcome == "computed":
            stats.computed += 1
        else:
            stats.failed.append((cell_id, error))

    manifest = {
        "schema": 1,
        "plan_hash": plan.plan_hash,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "tool_versions": {"vcm-bench": __version__, "numpy": np.__version__},
        "dataset_id": plan.dataset.dataset_id,
        "qp_ladder": list(plan.qp_ladder),
        "fps": plan.dataset.fps,
        "gt_modes": [m.value for m in plan.gt_modes],
        "codecs": [{"codec_id": c.codec_id, "config_id": c.config_id} for c in plan.codecs],
        "metrics": [
            {
                "metric_id": m.metric_id,
                "kind": m.kind,
                "model_id": m.model_id,
                "match_kind": m.match_kind,
            }
            for m in plan.metrics
        ],
        "frames": [f.to_json_obj() for f in frames],
        "iou_thresholds": list(plan.iou_thresholds),
        "score_threshold": plan.score_threshold,
        "failed_cells": [{"cell": c, "error": e} for c, e in stats.failed],
    }
    store.write_manifest(manifest)
    store.run_stats = stats
    log.info(
        "run complete: %d computed, %d cached, %d failed",
        stats.computed,
        stats.cached,
        len(stats.failed),
    )
    return store


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _manifest_metric(manifest: dict, metric_id: str) -> dict:
    for m in manifest["metrics"]:
        if m["metric_id"] == metric_id:
            return m
    raise DataError(f"metric_id {metric_id!r} not in store manifest")


def _manifest_codec(manifest: dict, codec_id: str) -> dict:
    for c in manifest["codecs"]:
        if c["codec_id"] == codec_id:
            return c
    raise DataError(f"codec_id {codec_id!r} not in store manifest")


def _ladder_records(store: ResultStore, manifest, codec_id, qp, metric_id, gt_mode):
    codec = _manifest_codec(manifest, codec_id)
    metric = _manifest_metric(manifest, metric_id)
    records = []
    missing = []
    for fobj in manifest["frames"]:
        frame = FrameRef.from_json_obj(fobj)
        key = cell_key(
            codec_id, codec["config_id"], qp, frame, metric_id, gt_mode, metric["model_id"]
        )
        record = store.get(key)
        if record is None:
            missing.append(frame.stem)
        else:
            records.append(record)
    if missing:
        raise IncompleteLadderError(
            f"{metric_id}/{codec_id}/qp{qp:02d}/{GtMode(gt_mode).value}: "
            f"missing cells for frames {missing}"
        )
    return records, metric


def _aggregate_value(records, metric: dict, manifest: dict) -> float:
    kind = metric["kind"]
    if kind in SEG_KINDS:
        cm = None
        for record in records:
            part = seg_metrics.ConfusionMatrix(
                class_count=len(record.aux["counts"]),
                counts=np.array(record.aux["counts"], dtype=np.int64),
                void_fn=np.array(record.aux["void_fn"], dtype=np.int64),
                ignored_pixels=int(record.aux["ignored_pixels"]),
            )
            cm = part if cm is None else seg_metrics.merge(cm, part)
        return getattr(seg_metrics, kind)(cm)
    if kind in DET_KINDS:
        thresholds = [float(t) for t in manifest["iou_thresholds"]]
        ref_counts: dict = {}
        pooled = {f"{t:.2f}": [] for t in thresholds}
        for record in records:
            for c, n in record.aux["ref_counts"].items():
                ref_counts[int(c)] = ref_counts.get(int(c), 0) + int(n)
            for t_key, dets in record.aux["matches"].items():
                pooled[t_key].extend(dets)
        per_class = {}
        for class_id, count in sorted(ref_counts.items()):
            aps = []
            for t in thresholds:
                scored = [
                    (score, bool(tp))
                    for cid, score, tp in pooled[f"{t:.2f}"]
                    if int(cid) == class_id
                ]
                aps.append(det_metrics._interpolated_ap(scored, count))
            per_class[class_id] = sum(aps) / len(aps)
        if not per_class:
            raise seg_metrics.UndefinedMetricError("no reference instances in ladder point")
        if kind == "ap":
            return sum(per_class.values()) / len(per_class)
        total = sum(ref_counts.values())
        return sum((ref_counts[c] / total) * per_class[c] for c in per_class)
    # quality metrics: per-frame mean, infinite PSNR frames excluded
    values = [r.value for r in records]
    finite = [v for v in values if np.isfinite(v)]
    if not finite:
        raise seg_metrics.UndefinedMetricError("all frames infinite; mean undefined")
    return float(sum(finite) / len(finite))


def assemble_curve(store: ResultStore, codec_id: str, metric_id: str, gt_mode) -> RdCurve:
    """Fold a full QP ladder of records into one rate-performance curve.

    Segmentation metrics aggregate through one global confusion matrix,
    detection metrics through the dataset-wide PR construction, PSNR/VMAF
    as per-frame means; rates are exact total bits over total pixels (or
    kbit/s when the plan declares an fps).
    """
    gt_mode = GtMode(gt_mode)
    manifest = store.read_manifest()
    points = []
    qps = []
    for qp in manifest["qp_ladder"]:
        records, metric = _ladder_records(store, manifest, codec_id, qp, metric_id, gt_mode)
        value = _aggregate_value(records, metric, manifest)
        total_bits = sum(r.rate_bits for r in records)
        if manifest.get("fps"):
            rate = total_bits * manifest["fps"] / (1000.0 * len(records))
            unit = "kbit/s"
        else:
            pixels = sum(r.frame.width * r.frame.height for r in records)
            rate = total_bits / pixels
            unit = "bpp"
        points.append((rate, value))
        qps.append(qp)
    return RdCurve(
        points=tuple(points),
        codec_id=codec_id,
        metric_id=metric_id,
        gt_mode=gt_mode,
        rate_unit=unit,
        qps=tuple(qps),
    )


def per_poc_curve(
    store: ResultStore, codec_id: str, qp: int, metric_id: str, gt_mode=None
):
    """Metric value per picture order count, averaged over sequences.

    All sequences must cover the same POC window; ragged windows are an
    error. Returns [(poc, mean value), ...] sorted by POC.
    """
    manifest = store.read_manifest()
    if gt_mode is None:
        modes = [GtMode(m) for m in manifest["gt_modes"]]
        if len(modes) != 1:
            raise DataError("store holds multiple GT modes; pass gt_mode explicitly")
        gt_mode = modes[0]
    gt_mode = GtMode(gt_mode)
    records, _ = _ladder_records(store, manifest, codec_id, qp, metric_id, gt_mode)
    by_sequence: dict = defaultdict(dict)
    for record in records:
        by_sequence[record.frame.sequence_id][record.frame.frame_index] = record.value
    windows = {seq: tuple(sorted(vals)) for seq, vals in by_sequence.items()}
    distinct = set(windows.values())
    if len(distinct) > 1:
        raise DataError(f"ragged POC windows across sequences: {windows}")
    pocs = sorted(next(iter(distinct)))
    return [
        (poc, sum(by_sequence[seq][poc] for seq in by_sequence) / len(by_sequence))
        for poc in pocs
    ]
