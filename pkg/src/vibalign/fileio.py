"""On-disk formats: the VIBE frame cube and 8-bit portable greymaps.

Frame cube layout (all little-endian)::

    offset  size  field
    0       4     magic b"VIBE"
    4       2     format version (u16)
    6       4     height H (u32)
    10      4     width W (u32)
    14      4     frame count T (u32)
    18      4     frame rate in Hz (f32)
    22      ...   T*H*W f32 intensities, frame-major then row-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import VibalignError
from .phantom import FrameSequence

MAGIC = b"VIBE"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIf")
HEADER_SIZE = _HEADER.size


class FrameCubeError(VibalignError):
    """Base class for malformed frame-cube files."""


class BadMagicError(FrameCubeError):
    pass


class VersionMismatchError(FrameCubeError):
    pass


class InvalidHeaderError(FrameCubeError):
    pass


class TruncatedPayloadError(FrameCubeError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"payload is {actual} bytes, expected {expected} bytes")
        self.expected = expected
        self.actual = actual


def write_frame_cube(seq: FrameSequence, path: str | os.PathLike) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, h, w = frames.shape
    header = _HEADER.pack(MAGIC, VERSION, h, w, t, seq.frame_rate)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes(order="C"))


def read_frame_cube(path: str | os.PathLike) -> FrameSequence:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        if not data.startswith(MAGIC[: len(data)]) or len(data) < len(MAGIC):
            raise BadMagicError(f"{path}: not a frame cube (file is {len(data)} bytes)")
        raise InvalidHeaderError(f"{path}: header truncated ({len(data)} of {HEADER_SIZE} bytes)")
    magic, version, h, w, t, frame_rate = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this reader supports {VERSION}")
    if h == 0 or w == 0:
        raise InvalidHeaderError(f"{path}: degenerate image size {h}x{w}")
    if t < 2:
        raise InvalidHeaderError(f"{path}: frame count {t} is below 2")
    if not (np.isfinite(frame_rate) and frame_rate > 0):
        raise InvalidHeaderError(f"{path}: invalid frame rate {frame_rate}")
    expected = h * w * t * 4
    actual = len(data) - HEADER_SIZE
    if actual != expected:
        raise TruncatedPayloadError(expected, actual)
    frames = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).reshape(t, h, w)
    return FrameSequence(frames.astype(np.float32), float(frame_rate))


def write_pgm(values: np.ndarray, path: str | os.PathLike) -> None:
    """Write values in [0, 1] as a binary 8-bit greymap (P5)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("greymap needs a 2-D array")
    pixels = np.round(np.clip(values, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary 8-bit greymap written by ``write_pgm``; returns uint8."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 greymap")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: greymap payload truncated")
    return pixels.reshape(h, w)
