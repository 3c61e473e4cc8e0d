"""Drives external encoder/decoder binaries over QP ladders and accounts bitrate exactly.

External codecs are configured by command templates with the placeholders
``{input} {output} {qp} {width} {height} {frames}`` and are handed raw
planar YCbCr 4:2:0 (see :mod:`vcmbench.yuv` for the pinned conversion).
Rates are always measured from the produced bitstream file; nothing is
estimated.

A deterministic built-in mock codec substitutes for reference software at
desk scale: uniform scalar quantization with the H.26x-style step curve
``step = round(2^((qp - 4) / 6))`` (clamped to >= 1) followed by lossless
compression of the degraded raster, whose size is the rate.
"""

from __future__ import annotations

import shlex
import shutil
import string
import subprocess
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .datamodel import DataError, FrameRef
from . import yuv

TEMPLATE_PLACEHOLDERS = {"input", "output", "qp", "width", "height", "frames"}
MOCK_QP_RANGE = (0, 51)


class ConfigurationError(ValueError):
    """Invalid codec specification; raised before any execution."""


class CodecRunError(RuntimeError):
    """An external codec invocation failed."""


def _template_fields(template: str):
    try:
        return {name for _, name, _, _ in string.Formatter().parse(template) if name}
    except ValueError as exc:
        raise ConfigurationError(f"unparseable command template {template!r}: {exc}") from exc


def _validate_template(template: str, required, label: str):
    fields = _template_fields(template)
    unknown = fields - TEMPLATE_PLACEHOLDERS
    if unknown:
        raise ConfigurationError(f"{label} has unknown placeholder(s) {sorted(unknown)}")
    missing = set(required) - fields
    if missing:
        raise ConfigurationError(f"{label} is missing placeholder(s) {sorted(missing)}")


@dataclass(frozen=True)
class CodecSpec:
    """External codec driven through encode/decode command templates."""

    codec_id: str
    encode_template: str
    decode_template: str
    config_id: str = "intra"
    pixel_format: str = "yuv420p8"

    def __post_init__(self):
        _validate_template(
            self.encode_template, {"input", "output", "qp"}, f"{self.codec_id} encode_template"
        )
        _validate_template(
            self.decode_template, {"input", "output"}, f"{self.codec_id} decode_template"
        )
        if self.pixel_format != "yuv420p8":
            raise ConfigurationError(
                f"unsupported pixel_format {self.pixel_format!r} (only yuv420p8)"
            )


@dataclass(frozen=True)
class MockCodecSpec:
    """Built-in deterministic quantize-and-compress codec for desk-scale runs.

    ``qp_offset`` and ``step_divisor`` reshape the quantizer-step curve;
    ``entropy`` selects the lossless stage ('raw' = plain deflate,
    'delta' = horizontal-difference filter before deflate, which codes
    smooth content cheaper at identical distortion).
    """

    codec_id: str
    config_id: str = "intra"
    qp_offset: int = 0
    step_divisor: float = 6.0
    entropy: str = "raw"

    def __post_init__(self):
        if self.entropy not in ("raw", "delta"):
            raise ConfigurationError(f"unknown entropy stage {self.entropy!r}")
        if self.step_divisor <= 0:
            raise ConfigurationError("step_divisor must be positive")


@dataclass(frozen=True)
class EncodeResult:
    """Outcome of one (codec, QP) encode+decode over a frame list."""

    bitstream_bytes: int
    qp: int
    decoded_path: Path  # directory holding the decoded frames
    decoded_frames: tuple  # per-frame raster paths, frame order
    per_frame_bits: Optional[tuple] = None
    wall_time: float = 0.0

    def __post_init__(self):
        if self.bitstream_bytes < 0:
            raise DataError("bitstream_bytes must be >= 0")
        if self.per_frame_bits is not None:
            per_frame = tuple(int(b) for b in self.per_frame_bits)
            object.__setattr__(self, "per_frame_bits", per_frame)
            if sum(per_frame) != 8 * self.bitstream_bytes:
                raise DataError(
                    f"per-frame bits sum {sum(per_frame)} != bitstream size "
                    f"{8 * self.bitstream_bytes} bits"
                )


def quantizer_step(qp: int, qp_offset: int = 0, step_divisor: float = 6.0) -> int:
    """H.26x-style quantizer growth: step doubles every ``step_divisor`` QP."""
    if not MOCK_QP_RANGE[0] <= qp <= MOCK_QP_RANGE[1]:
        raise DataError(f"qp {qp} outside mock codec range {MOCK_QP_RANGE}")
    return max(1, round(2.0 ** ((qp + qp_offset - 4) / step_divisor)))


def _entropy_payload(arr: np.ndarray, entropy: str) -> bytes:
    if entropy == "delta":
        work = arr.reshape(arr.shape[0], -1)
        filtered = work.copy()
        filtered[:, 1:] = work[:, 1:] - work[:, :-1]  # uint8 wraparound
        return filtered.tobytes()
    return arr.tobytes()


def _mock_degrade(image: np.ndarray, qp: int, qp_offset: int, step_divisor: float) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise DataError("mock codec expects uint8 rasters")
    step = quantizer_step(qp, qp_offset=qp_offset, step_divisor=step_divisor)
    if step == 1:
        return image.copy()
    index = np.rint(image.astype(np.float64) / step)  # ties to even
    index = np.minimum(index, 255 // step)  # keep reconstructions inside 8 bit
    return (index * step).astype(np.uint8)


def mock_codec(
    image: np.ndarray,
    qp: int,
    qp_offset: int = 0,
    step_divisor: float = 6.0,
    entropy: str = "raw",
):
    """Quantize an 8-bit raster and return (degraded raster, rate in bits).

    Reconstruction uses round-half-to-even on the quantizer index, with the
    index clamped so reconstructions stay within 8-bit range (pixel 255 at
    step 2 reconstructs to 254). QP values up to 7 give step 1, i.e. the
    identity. The rate is 8x the deflate-compressed size of the degraded
    raster.
    """
    degraded = _mock_degrade(image, qp, qp_offset, step_divisor)
    rate_bits = 8 * len(zlib.compress(_entropy_payload(degraded, entropy), 9))
    return degraded, rate_bits


def _load_frame_rgb(frame: FrameRef) -> np.ndarray:
    if not frame.image_path.is_file():
        raise DataError(f"frame image not found: {frame.image_path}")
    with Image.open(frame.image_path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if arr.shape[:2] != (frame.height, frame.width):
        raise DataError(
            f"{frame.image_path} is {arr.shape[1]}x{arr.shape[0]}, "
            f"frame declares {frame.width}x{frame.height}"
        )
    return arr


def _check_uniform(frames: Sequence[FrameRef]):
    if not frames:
        raise DataError("encode_decode needs at least one frame")
    dims = {(f.width, f.height) for f in frames}
    if len(dims) > 1:
        raise DataError(f"frames must share dimensions, got {sorted(dims)}")


def _save_png(arr: np.ndarray, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def _encode_decode_mock(spec: MockCodecSpec, frames, qp, workdir: Path) -> EncodeResult:
    start = time.monotonic()
    decoded_dir = workdir / "decoded"
    decoded_dir.mkdir(parents=True, exist_ok=True)
    per_frame_bits = []
    decoded_paths = []
    with open(workdir / "bitstream.bin", "wb") as bitstream:
        for frame in frames:
            rgb = _load_frame_rgb(frame)
            degraded = _mock_degrade(rgb, qp, spec.qp_offset, spec.step_divisor)
            payload = zlib.compress(_entropy_payload(degraded, spec.entropy), 9)
            bitstream.write(payload)
            per_frame_bits.append(8 * len(payload))
            out = decoded_dir / f"{frame.stem}.png"
            _save_png(degraded, out)
            decoded_paths.append(out)
    total_bytes = (workdir / "bitstream.bin").stat().st_size
    return EncodeResult(
        bitstream_bytes=total_bytes,
        qp=qp,
        decoded_path=decoded_dir,
        decoded_frames=tuple(decoded_paths),
        per_frame_bits=tuple(per_frame_bits),
        wall_time=time.monotonic() - start,
    )


def _run_command(template: str, mapping: dict, log_path: Path, label: str):
    argv = [arg.format_map(mapping) for arg in shlex.split(template)]
    binary = shutil.which(argv[0]) or (argv[0] if Path(argv[0]).is_file() else None)
    if binary is None:
        raise ConfigurationError(f"{label}: binary not resolvable: {argv[0]}")
    proc = subprocess.run(argv, capture_output=True, text=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text(
        f"$ {' '.join(argv)}\n--- stdout ---\n{proc.stdout}\n--- stderr ---\n{proc.stderr}\n"
    )
    if proc.returncode != 0:
        raise CodecRunError(
            f"{label} exited with status {proc.returncode}; stderr:\n{proc.stderr.strip()}"
        )


def _encode_decode_external(spec: CodecSpec, frames, qp, workdir: Path) -> EncodeResult:
    start = time.monotonic()
    width, height = frames[0].width, frames[0].height
    input_yuv = workdir / "input.yuv"
    yuv.write_yuv420((_load_frame_rgb(f) for f in frames), input_yuv)
    bitstream = workdir / "bitstream.bin"
    decoded_yuv = workdir / "decoded.yuv"
    mapping = {
        "qp": qp,
        "width": width,
        "height": height,
        "frames": len(frames),
    }
    _run_command(
        spec.encode_template,
        {**mapping, "input": str(input_yuv), "output": str(bitstream)},
        workdir / "encode.log",
        f"{spec.codec_id} encoder (qp {qp})",
    )
    if not bitstream.is_file():
        raise CodecRunError(f"{spec.codec_id} encoder produced no bitstream at {bitstream}")
    _run_command(
        spec.decode_template,
        {**mapping, "input": str(bitstream), "output": str(decoded_yuv)},
        workdir / "decode.log",
        f"{spec.codec_id} decoder (qp {qp})",
    )
    if not decoded_yuv.is_file():
        raise CodecRunError(f"{spec.codec_id} decoder produced no output at {decoded_yuv}")
    rgb_frames = yuv.read_yuv420(decoded_yuv, width, height, len(frames))
    decoded_dir = workdir / "decoded"
    decoded_paths = []
    for frame, rgb in zip(frames, rgb_frames):
        out = decoded_dir / f"{frame.stem}.png"
        _save_png(rgb, out)
        decoded_paths.append(out)
    return EncodeResult(
        bitstream_bytes=bitstream.stat().st_size,
        qp=qp,
        decoded_path=decoded_dir,
        decoded_frames=tuple(decoded_paths),
        per_frame_bits=None,
        wall_time=time.monotonic() - start,
    )


def encode_decode(spec, frames: Sequence[FrameRef], qp: int, workdir) -> EncodeResult:
    """Encode and decode a frame list at one QP; deterministic for fixed inputs."""
    _check_uniform(frames)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if isinstance(spec, MockCodecSpec):
        return _encode_decode_mock(spec, frames, qp, workdir)
    if isinstance(spec, CodecSpec):
        return _encode_decode_external(spec, frames, qp, workdir)
    raise ConfigurationError(f"unknown codec spec type {type(spec).__name__}")


def bitrate(result: EncodeResult, frames: Sequence[FrameRef], fps: Optional[float] = None) -> float:
    """Bits per pixel for image sets; kbit/s when ``fps`` marks a video sequence."""
    total_bits = 8 * result.bitstream_bytes
    if fps is not None:
        if not frames:
            raise DataError("bitrate needs at least one frame")
        return total_bits * fps / (1000.0 * len(frames))
    pixels = sum(f.width * f.height for f in frames)
    if pixels == 0:
        raise DataError("bitrate undefined for zero pixels")
    return total_bits / pixels
