"""Evaluation harness for video coding for machines.

Measures how compression affects machine-vision task performance, can
substitute predictions on pristine inputs for hand-labeled ground truth
(pseudo GT), and compares codecs through the Bjontegaard Delta Rate in
either GT mode.
"""

__version__ = "0.1.0"

from .datamodel import (  # noqa: E402
    DataError,
    Detection,
    DetectionSet,
    EvalRecord,
    FrameRef,
    GtMode,
    Instance,
    InstanceSet,
    LabelMap,
    RleMask,
    load_annotations,
    load_detections,
    load_label_map,
)
from .seg_metrics import ConfusionMatrix, accumulate, frwacc, merge, miou, oacc  # noqa: E402
from .det_metrics import (  # noqa: E402
    APResult,
    average_precision,
    class_weights,
    evaluate_detections,
    iou_box,
    iou_mask,
    match_detections,
    wap,
)
from .quality_metrics import ImagePair, ingest_vmaf, psnr, sequence_psnr  # noqa: E402
from .pseudo_gt import instance_pseudo_gt, semantic_pseudo_gt  # noqa: E402
from .bd_metrics import BdResult, FitKind, RdCurve, bd_diff, bd_rate, fit_log_rate  # noqa: E402
from .codec_adapter import CodecSpec, EncodeResult, MockCodecSpec, bitrate, encode_decode, mock_codec  # noqa: E402
from .orchestrator import (  # noqa: E402
    ExperimentPlan,
    ResultStore,
    TraceRecorder,
    assemble_curve,
    load_plan,
    per_poc_curve,
    run,
)
from .report import BdrRow, BdrTable, build_bdr_table, export  # noqa: E402

__all__ = [
    "__version__",
    "DataError",
    "Detection",
    "DetectionSet",
    "EvalRecord",
    "FrameRef",
    "GtMode",
    "Instance",
    "InstanceSet",
    "LabelMap",
    "RleMask",
    "load_annotations",
    "load_detections",
    "load_label_map",
    "ConfusionMatrix",
    "accumulate",
    "merge",
    "miou",
    "oacc",
    "frwacc",
    "APResult",
    "average_precision",
    "class_weights",
    "evaluate_detections",
    "iou_box",
    "iou_mask",
    "match_detections",
    "wap",
    "ImagePair",
    "psnr",
    "sequence_psnr",
    "ingest_vmaf",
    "semantic_pseudo_gt",
    "instance_pseudo_gt",
    "BdResult",
    "FitKind",
    "RdCurve",
    "bd_rate",
    "bd_diff",
    "fit_log_rate",
    "CodecSpec",
    "MockCodecSpec",
    "EncodeResult",
    "encode_decode",
    "mock_codec",
    "bitrate",
    "ExperimentPlan",
    "ResultStore",
    "TraceRecorder",
    "load_plan",
    "run",
    "assemble_curve",
    "per_poc_curve",
    "BdrRow",
    "BdrTable",
    "build_bdr_table",
    "export",
]
