"""Temporal windows, training patches, augmentation and a compression proxy.

Frames are 2-D float arrays holding luma in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.fft import dctn, idctn

from .errors import DataFormatError, DimensionError
from .model import GROUP_INDICES, TARGET_INDEX

WINDOW_RADIUS = 3
BLOCK = 8

# quantizer step (8-bit units) per degradation strength 1..5
STRENGTH_STEPS = {1: 2, 2: 4, 3: 8, 4: 16, 5: 32}

# JPEG Annex K luminance table, normalised so the DC weight is 1
_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64) / 16.0


@dataclass
class GoPWindow:
    """Seven frames centred on the target frame (index 3)."""

    frames: list

    def __post_init__(self):
        if len(self.frames) != 2 * WINDOW_RADIUS + 1:
            raise DimensionError(f"a window holds exactly 7 frames, got {len(self.frames)}")
        shape = np.shape(self.frames[0])
        for f in self.frames:
            if np.shape(f) != shape:
                raise DimensionError("window frames differ in size", shape, np.shape(f))

    @property
    def target(self) -> np.ndarray:
        return self.frames[TARGET_INDEX]

    @property
    def groups(self) -> list[list[np.ndarray]]:
        """G_1, G_2, G_3 as frame lists; the target is always the middle element."""
        return [[self.frames[i] for i in idx] for idx in GROUP_INDICES]

    def stack(self) -> np.ndarray:
        return np.stack(self.frames)


@dataclass
class PatchPair:
    lq_window: np.ndarray  # (7, size, size)
    hq_target: np.ndarray  # (size, size)


def window_indices(length: int, k: int, radius: int = WINDOW_RADIUS) -> list[int]:
    """Frame indices k-radius..k+radius, clamped to the sequence."""
    if length < 1:
        raise DataFormatError("cannot build a window from an empty sequence")
    if not 0 <= k < length:
        raise IndexError(f"target index {k} outside sequence of length {length}")
    return [min(max(i, 0), length - 1) for i in range(k - radius, k + radius + 1)]


def window(sequence: Sequence[np.ndarray], k: int, radius: int = WINDOW_RADIUS) -> GoPWindow:
    return GoPWindow([sequence[i] for i in window_indices(len(sequence), k, radius)])


def crop_patches(lq_window, hq_frame: np.ndarray, size: int, seed, count: int = 1) -> list[PatchPair]:
    """Co-located random crops of the LQ window and the HQ target.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    lq = lq_window.stack() if isinstance(lq_window, GoPWindow) else np.asarray(lq_window)
    hq = np.asarray(hq_frame)
    h, w = hq.shape
    if lq.shape[1:] != (h, w):
        raise DimensionError("LQ window and HQ frame differ in size", lq.shape, hq.shape)
    if h < size or w < size:
        raise DimensionError(f"frame smaller than patch size {size}", hq.shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        pairs.append(PatchPair(lq[:, top:top + size, left:left + size].copy(),
                               hq[top:top + size, left:left + size].copy()))
    return pairs


def _dihedral(a: np.ndarray, code: int) -> np.ndarray:
    # code = 4*flip + quarter turns; flip is applied after rotating
    out = np.rot90(a, code % 4, axes=(-2, -1))
    if code >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(pair: PatchPair, code: int) -> PatchPair:
    """Apply dihedral element ``code`` (0..7) to every patch of the pair."""
    if not 0 <= code < 8:
        raise ValueError(f"augmentation code must be in 0..7, got {code}")
    if pair.hq_target.shape[0] != pair.hq_target.shape[1]:
        raise DimensionError("augmentation requires square patches", pair.hq_target.shape)
    return PatchPair(_dihedral(pair.lq_window, code), _dihedral(pair.hq_target, code))


def inverse_code(code: int) -> int:
    """Code whose transform undoes ``code``."""
    return code if code >= 4 else (4 - code) % 4


def quantizer_steps(strength: int) -> np.ndarray:
    if strength not in STRENGTH_STEPS:
        raise ValueError(f"strength must be in 1..5, got {strength}")
    return STRENGTH_STEPS[strength] / 255.0 * _LUMA_TABLE


def _blockwise(frame: np.ndarray, steps: np.ndarray | None) -> np.ndarray:
    h, w = frame.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(frame, ((0, ph), (0, pw)), mode="edge") if ph or pw else frame
    hb, wb = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    blocks = padded.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3)
    coeffs = dctn(blocks, axes=(2, 3), norm="ortho")
    if steps is not None:
        coeffs = np.round(coeffs / steps) * steps
    rec = idctn(coeffs, axes=(2, 3), norm="ortho")
    rec = rec.transpose(0, 2, 1, 3).reshape(padded.shape)[:h, :w]
    return rec


def synthetic_degrade(frames: Sequence[np.ndarray], strength: int | None) -> list[np.ndarray]:
    """Blockwise 8x8 DCT quantisation standing in for a video codec.

    ``strength`` 1..5 selects steps 2, 4, 8, 16, 32 (8-bit units) weighted by
    the JPEG luminance table; ``None`` skips quantisation (pure round trip).
    """
    steps = None if strength is None else quantizer_steps(strength)
    return [np.clip(_blockwise(np.asarray(f, dtype=np.float64), steps), 0.0, 1.0) for f in frames]


def synthetic_sequence(num_frames: int, height: int, width: int, seed: int = 0) -> list[np.ndarray]:
    """A panning test scene: shading, hard-edged shapes and oriented texture.

    The scene moves by one pixel per frame along each axis (random signs), so
    neighbouring frames hold displaced copies of the same content on a
    different 8x8 block grid.
    """
    rng = np.random.default_rng(seed)
    margin = num_frames + 8
    H, W = height + 2 * margin, width + 2 * margin
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    canvas = 0.3 + 0.3 * (yy / H) + 0.2 * (xx / W)
    for _ in range(4):
        fy, fx = rng.uniform(-0.35, 0.35, size=2)
        canvas += rng.uniform(0.02, 0.06) * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    area = H * W
    for _ in range(max(8, area // 300)):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        ry, rx = rng.uniform(2, 12, size=2)
        level = rng.uniform(-0.35, 0.35)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        canvas = np.where(mask, canvas + level, canvas)
    canvas = np.clip(canvas, 0.02, 0.98)
    vy, vx = rng.choice([-1, 1], size=2)
    frames = []
    for t in range(num_frames):
        oy, ox = margin + vy * t, margin + vx * t
        frames.append(canvas[oy:oy + height, ox:ox + width].copy())
    return frames


class PatchSampler:
    """Deterministic stream of training batches from paired sequences.

    Each draw picks a sequence, a target index, a crop position and an
    augmentation code from one generator seeded once.
    """

    def __init__(self, pairs: Sequence[tuple[Sequence[np.ndarray], Sequence[np.ndarray]]],
                 patch_size: int, batch_size: int, seed: int, augment: bool = True):
        if not pairs:
            raise DataFormatError("no training sequences")
        self.pairs = [(list(lq), list(hq)) for lq, hq in pairs]
        for lq, hq in self.pairs:
            if len(lq) != len(hq) or not lq:
                raise DataFormatError("LQ and HQ sequences must be non-empty and of equal length")
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.augment = augment
        self.rng = np.random.default_rng(seed)

    def sample(self) -> PatchPair:
        lq, hq = self.pairs[int(self.rng.integers(len(self.pairs)))]
        k = int(self.rng.integers(len(lq)))
        pair = crop_patches(window(lq, k), hq[k], self.patch_size, self.rng)[0]
        if self.augment:
            pair = augment(pair, int(self.rng.integers(8)))
        return pair

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.sample() for _ in range(self.batch_size)]
        lq = np.stack([p.lq_window for p in pairs]).astype(np.float32)
        hq = np.stack([p.hq_target for p in pairs])[:, None].astype(np.float32)
        return lq, hq

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        while True:
            yield self.next_batch()
