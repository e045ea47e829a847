"""Raw I420 (YUV 4:2:0 planar) video and binary PGM output."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError


@dataclass
class VideoSequence:
    width: int
    height: int
    y: list[np.ndarray]  # uint8 (height, width)
    u: list[np.ndarray] | None = None  # uint8 (height/2, width/2)
    v: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataFormatError(f"invalid frame size {self.width}x{self.height}")
        for plane in self.y:
            if plane.shape != (self.height, self.width):
                raise DataFormatError(f"Y plane {plane.shape} does not match {self.width}x{self.height}")
        if (self.u is None) != (self.v is None):
            raise DataFormatError("U and V planes must be both present or both absent")
        if self.u is not None:
            if self.width % 2 or self.height % 2:
                raise DataFormatError(f"4:2:0 chroma needs even dimensions, got {self.width}x{self.height}")
            if len(self.u) != len(self.y) or len(self.v) != len(self.y):
                raise DataFormatError("chroma frame count differs from luma")

    @property
    def frame_count(self) -> int:
        return len(self.y)

    def luma(self) -> list[np.ndarray]:
        """Y planes as float32 in [0, 1]."""
        return [plane.astype(np.float32) / np.float32(255.0) for plane in self.y]

    def with_luma(self, frames: Sequence[np.ndarray]) -> "VideoSequence":
        """Copy of this sequence with new Y planes; chroma is carried through."""
        if len(frames) != self.frame_count:
            raise DataFormatError(f"expected {self.frame_count} frames, got {len(frames)}")
        return VideoSequence(self.width, self.height, [quantize(f) for f in frames], self.u, self.v)


def quantize(frame: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes: clamp, then round half away from zero."""
    scaled = np.clip(np.asarray(frame, dtype=np.float64) * 255.0, 0.0, 255.0)
    return np.floor(scaled + 0.5).astype(np.uint8)


def frame_bytes(width: int, height: int) -> int:
    return width * height + 2 * ((width // 2) * (height // 2))


def read_yuv420(path, width: int, height: int) -> VideoSequence:
    if width < 1 or height < 1:
        raise DataFormatError(f"invalid frame size {width}x{height}")
    if width % 2 or height % 2:
        raise DataFormatError(f"I420 needs even dimensions, got {width}x{height}")
    data = Path(path).read_bytes()
    per_frame = frame_bytes(width, height)
    if not data or len(data) % per_frame:
        raise DataFormatError(f"{path}: size {len(data)} bytes is not a multiple of the "
                              f"{per_frame}-byte frame size for {width}x{height}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, per_frame)
    ys, us, vs = [], [], []
    cw, ch = width // 2, height // 2
    for frame in raw:
        ys.append(frame[:width * height].reshape(height, width).copy())
        us.append(frame[width * height:width * height + cw * ch].reshape(ch, cw).copy())
        vs.append(frame[width * height + cw * ch:].reshape(ch, cw).copy())
    return VideoSequence(width, height, ys, us, vs)


def write_yuv420(seq: VideoSequence, path) -> None:
    cw, ch = seq.width // 2, seq.height // 2
    neutral = np.full((ch, cw), 128, dtype=np.uint8)
    chunks = []
    for k, plane in enumerate(seq.y):
        chunks.append(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())
        chunks.append((seq.u[k] if seq.u is not None else neutral).tobytes())
        chunks.append((seq.v[k] if seq.v is not None else neutral).tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_pgm(frame: np.ndarray, path) -> None:
    """Binary PGM (P5, maxval 255) of a [0, 1] luma frame."""
    frame = np.asarray(frame)
    h, w = frame.shape
    payload = quantize(frame).tobytes()
    try:
        Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
