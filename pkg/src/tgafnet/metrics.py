"""Luma PSNR / SSIM and the enhancement-gain report."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("frames differ in size", a.shape, b.shape)
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for [0, 1] frames; identical frames give ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim(a, b) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), unit dynamic range.

    The map is averaged over window positions lying fully inside the frame.
    """
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs 2-D frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}", a.shape)
    if np.array_equal(a, b):
        return 1.0
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class QualityReport:
    """Per-frame and averaged quality of degraded (and enhanced) frames against raw.

    ``delta_ssim`` is expressed in units of 1e-4.
    """

    psnr_degraded: list[float]
    ssim_degraded: list[float]
    psnr_enhanced: list[float] = field(default_factory=list)
    ssim_enhanced: list[float] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.psnr_degraded)

    @property
    def has_enhanced(self) -> bool:
        return bool(self.psnr_enhanced)

    @property
    def mean_psnr_degraded(self) -> float:
        return float(np.mean(self.psnr_degraded))

    @property
    def mean_ssim_degraded(self) -> float:
        return float(np.mean(self.ssim_degraded))

    @property
    def mean_psnr_enhanced(self) -> float | None:
        return float(np.mean(self.psnr_enhanced)) if self.has_enhanced else None

    @property
    def mean_ssim_enhanced(self) -> float | None:
        return float(np.mean(self.ssim_enhanced)) if self.has_enhanced else None

    @property
    def delta_psnr(self) -> float | None:
        if not self.has_enhanced:
            return None
        return self.mean_psnr_enhanced - self.mean_psnr_degraded

    @property
    def delta_ssim(self) -> float | None:
        if not self.has_enhanced:
            return None
        return (self.mean_ssim_enhanced - self.mean_ssim_degraded) * 1e4

    def key_values(self) -> dict[str, str]:
        kv = {
            "frames": str(self.frame_count),
            "psnr_degraded": f"{self.mean_psnr_degraded:.6f}",
            "ssim_degraded": f"{self.mean_ssim_degraded:.6f}",
        }
        if self.has_enhanced:
            kv["psnr_enhanced"] = f"{self.mean_psnr_enhanced:.6f}"
            kv["ssim_enhanced"] = f"{self.mean_ssim_enhanced:.6f}"
            kv["delta_psnr_db"] = f"{self.delta_psnr:.6f}"
            kv["delta_ssim_e4"] = f"{self.delta_ssim:.6f}"
        return kv

    def format(self) -> str:
        lines = []
        for k in range(self.frame_count):
            line = f"frame {k}: degraded {self.psnr_degraded[k]:.4f} dB / {self.ssim_degraded[k]:.6f}"
            if self.has_enhanced:
                line += f"  enhanced {self.psnr_enhanced[k]:.4f} dB / {self.ssim_enhanced[k]:.6f}"
            lines.append(line)
        if self.has_enhanced:
            lines.append(f"ΔPSNR {self.delta_psnr:.2f} dB  ΔSSIM {self.delta_ssim:.2f} (x1e-4)")
        lines.append("[report]")
        lines.extend(f"{k}={v}" for k, v in self.key_values().items())
        return "\n".join(lines)


def delta_report(raw: Sequence, degraded: Sequence, enhanced: Sequence | None = None) -> QualityReport:
    """Score degraded (and optionally enhanced) frames against the raw frames.

    ΔPSNR = mean_k psnr(enhanced_k, raw_k) - mean_k psnr(degraded_k, raw_k);
    ΔSSIM likewise, in units of 1e-4.
    """
    if len(raw) != len(degraded) or (enhanced is not None and len(enhanced) != len(raw)):
        lengths = (len(raw), len(degraded), None if enhanced is None else len(enhanced))
        raise DimensionError(f"sequence lengths disagree (raw, degraded, enhanced) = {lengths}")
    if not raw:
        raise DimensionError("cannot report on empty sequences")
    report = QualityReport([psnr(d, r) for d, r in zip(degraded, raw)],
                           [ssim(d, r) for d, r in zip(degraded, raw)])
    if enhanced is not None:
        report.psnr_enhanced = [psnr(e, r) for e, r in zip(enhanced, raw)]
        report.ssim_enhanced = [ssim(e, r) for e, r in zip(enhanced, raw)]
    return report
