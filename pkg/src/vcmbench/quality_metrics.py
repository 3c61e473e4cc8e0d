"""Pixel-fidelity metrics: PSNR computed natively, VMAF ingested from tool output.

PSNR is computed on the rasters as stored, MSE averaged over all pixels
and channels (a BT.601-luma mode is available via ``luma=True``).
Identical images yield ``math.inf``. VMAF is never computed here; the
model is an external versioned artifact, so scores are read from the
reference tool's JSON output.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import DataError
from .yuv import rgb_to_luma

PEAK = 255.0


@dataclass(frozen=True)
class ImagePair:
    """Reference and distorted 8-bit rasters of identical geometry."""

    reference: np.ndarray
    distorted: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        ref = np.asarray(self.reference)
        dist = np.asarray(self.distorted)
        if self.bit_depth != 8:
            raise DataError(f"only 8-bit rasters are supported, got bit depth {self.bit_depth}")
        if ref.dtype != np.uint8 or dist.dtype != np.uint8:
            raise DataError("image pair must be uint8 rasters")
        if ref.ndim not in (2, 3) or (ref.ndim == 3 and ref.shape[2] not in (1, 3)):
            raise DataError(f"expected HxW or HxWx{{1,3}} raster, got shape {ref.shape}")
        if ref.shape != dist.shape:
            raise DataError(f"dimension mismatch: {ref.shape} vs {dist.shape}")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "distorted", dist)


def mse(pair: ImagePair, luma: bool = False) -> float:
    ref, dist = pair.reference, pair.distorted
    if luma and ref.ndim == 3 and ref.shape[2] == 3:
        ref = rgb_to_luma(ref)
        dist = rgb_to_luma(dist)
    diff = ref.astype(np.float64) - dist.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(pair: ImagePair, luma: bool = False) -> float:
    """10 log10(255^2 / MSE) in dB; identical images give math.inf."""
    err = mse(pair, luma=luma)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / err)


@dataclass(frozen=True)
class SequencePsnr:
    """Per-frame mean PSNR plus the MSE-pooled alternative."""

    per_frame: tuple
    per_frame_mean: float
    mse_pooled: float
    excluded_infinite: int


def sequence_psnr(pairs, luma: bool = False) -> SequencePsnr:
    """Aggregate PSNR over frames.

    The headline value is the arithmetic mean of per-frame PSNRs with
    infinite frames excluded (warned about); ``mse_pooled`` averages the
    per-frame MSEs before converting to dB.
    """
    if not pairs:
        raise DataError("sequence_psnr needs at least one frame pair")
    frame_psnr = []
    frame_mse = []
    for pair in pairs:
        frame_mse.append(mse(pair, luma=luma))
        frame_psnr.append(psnr(pair, luma=luma))
    finite = [v for v in frame_psnr if math.isfinite(v)]
    excluded = len(frame_psnr) - len(finite)
    if excluded:
        warnings.warn(
            f"{excluded} identical frame(s) excluded from the per-frame PSNR mean",
            stacklevel=2,
        )
    mean = sum(finite) / len(finite) if finite else math.inf
    pooled_mse = sum(frame_mse) / len(frame_mse)
    pooled = math.inf if pooled_mse == 0 else 10.0 * math.log10(PEAK * PEAK / pooled_mse)
    return SequencePsnr(
        per_frame=tuple(frame_psnr),
        per_frame_mean=mean,
        mse_pooled=pooled,
        excluded_infinite=excluded,
    )


def ingest_vmaf(path) -> dict:
    """Read per-frame VMAF scores from the reference tool's JSON output.

    Accepts frame objects with a numeric ``vmaf`` field either at the top
    level or under ``metrics``; frames are keyed by ``frameNum`` when
    present, else by position.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"VMAF score file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed VMAF JSON in {path}: {exc}") from exc
    frames = doc.get("frames") if isinstance(doc, dict) else None
    if not isinstance(frames, list) or not frames:
        raise DataError(f"no per-frame section in VMAF output {path}")
    scores = {}
    for i, frame in enumerate(frames):
        if not isinstance(frame, dict):
            raise DataError(f"malformed frame entry {i} in {path}")
        source = frame.get("metrics", frame)
        if not isinstance(source, dict) or "vmaf" not in source:
            raise DataError(f"frame entry {i} in {path} has no 'vmaf' field")
        value = float(source["vmaf"])
        if not 0.0 <= value <= 100.0:
            raise DataError(f"score out of range [0, 100] at frame {i} in {path}: {value}")
        scores[int(frame.get("frameNum", i))] = value
    return scores
