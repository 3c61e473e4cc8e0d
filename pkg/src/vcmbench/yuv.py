"""Raw planar YCbCr 4:2:0 handoff: color conversion and .yuv file IO.

Pinned conversion (external codecs consume raw video, so this must be
reproducible bit-for-bit): full-range 8-bit BT.601,

    Y  =  0.299 R + 0.587 G + 0.114 B
    Cb = 128 - 0.168736 R - 0.331264 G + 0.5 B
    Cr = 128 + 0.5 R - 0.418688 G - 0.081312 B

rounded half away from zero and clipped to [0, 255]. Chroma is 2x2
box-averaged (same rounding); frame dimensions must be even.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datamodel import DataError

_RGB_TO_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.clip(_round_half_away(x), 0, 255).astype(np.uint8)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """Full-range BT.601 RGB -> YCbCr, 8-bit in and out."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"expected HxWx3 RGB raster, got shape {rgb.shape}")
    ycbcr = rgb.astype(np.float64) @ _RGB_TO_YCBCR.T + _YCBCR_OFFSET
    return _quantize(ycbcr)


def ycbcr_to_rgb(ycbcr: np.ndarray) -> np.ndarray:
    """Inverse full-range BT.601 conversion, 8-bit in and out."""
    ycbcr = np.asarray(ycbcr)
    if ycbcr.ndim != 3 or ycbcr.shape[2] != 3:
        raise DataError(f"expected HxWx3 YCbCr raster, got shape {ycbcr.shape}")
    y = ycbcr[..., 0].astype(np.float64)
    cb = ycbcr[..., 1].astype(np.float64) - 128.0
    cr = ycbcr[..., 2].astype(np.float64) - 128.0
    rgb = np.stack(
        [
            y + 1.402 * cr,
            y - 0.344136 * cb - 0.714136 * cr,
            y + 1.772 * cb,
        ],
        axis=-1,
    )
    return _quantize(rgb)


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma plane of an RGB raster (grayscale input passes through)."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8)
    y = rgb.astype(np.float64) @ _RGB_TO_YCBCR[0]
    return _quantize(y)


def subsample_420(plane: np.ndarray) -> np.ndarray:
    """2x2 box average of a chroma plane; requires even dimensions."""
    h, w = plane.shape
    if h % 2 or w % 2:
        raise DataError(f"4:2:0 subsampling needs even dimensions, got {w}x{h}")
    blocks = plane.astype(np.float64).reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return _quantize(blocks)


def upsample_420(plane: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling (each chroma sample covers its 2x2 block)."""
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)


def rgb_to_yuv420_planes(rgb: np.ndarray):
    """RGB frame -> (Y, Cb, Cr) planes in 4:2:0 layout."""
    ycbcr = rgb_to_ycbcr(rgb)
    return (
        ycbcr[..., 0],
        subsample_420(ycbcr[..., 1]),
        subsample_420(ycbcr[..., 2]),
    )


def yuv420_planes_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """(Y, Cb, Cr) 4:2:0 planes -> RGB frame."""
    ycbcr = np.stack([y, upsample_420(cb), upsample_420(cr)], axis=-1)
    return ycbcr_to_rgb(ycbcr)


def write_yuv420(frames_rgb, path) -> Path:
    """Write RGB frames to a planar 8-bit 4:2:0 .yuv file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for rgb in frames_rgb:
            y, cb, cr = rgb_to_yuv420_planes(rgb)
            fh.write(y.tobytes())
            fh.write(cb.tobytes())
            fh.write(cr.tobytes())
    return path


def read_yuv420(path, width: int, height: int, frame_count: int):
    """Read a planar 8-bit 4:2:0 .yuv file back into RGB frames."""
    path = Path(path)
    if width % 2 or height % 2:
        raise DataError(f"4:2:0 layout needs even dimensions, got {width}x{height}")
    luma_size = width * height
    chroma_size = luma_size // 4
    frame_size = luma_size + 2 * chroma_size
    data = path.read_bytes()
    if len(data) < frame_size * frame_count:
        raise DataError(
            f"{path} holds {len(data)} bytes, expected at least {frame_size * frame_count} "
            f"for {frame_count} frames of {width}x{height}"
        )
    frames = []
    for i in range(frame_count):
        base = i * frame_size
        y = np.frombuffer(data, np.uint8, luma_size, base).reshape(height, width)
        cb = np.frombuffer(data, np.uint8, chroma_size, base + luma_size).reshape(
            height // 2, width // 2
        )
        cr = np.frombuffer(data, np.uint8, chroma_size, base + luma_size + chroma_size).reshape(
            height // 2, width // 2
        )
        frames.append(yuv420_planes_to_rgb(y, cb, cr))
    return frames
