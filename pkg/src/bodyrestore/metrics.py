"""Full-reference image quality metrics: PSNR and SSIM.

Both operate on [0,1] float images (dynamic range fixed at 1.0). SSIM
uses the original defaults: 11x11 Gaussian window with sigma 1.5,
K1=0.01, K2=0.03, computed on the luma channel over valid window
positions only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K

_LUMA = (0.299, 0.587, 0.114)
_K1, _K2 = 0.01, 0.03
_WINDOW = 11
_SIGMA = 1.5


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    _check_pair(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img.astype(np.float64)
    r, g, b = _LUMA
    return (r * img[..., 0] + g * img[..., 1] + b * img[..., 2]).astype(np.float64)


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = _WINDOW) -> float:
    """Mean local structural similarity over valid window positions."""
    _check_pair(a, b)
    ga, gb = _to_gray(a), _to_gray(b)
    if min(ga.shape) < window:
        raise ValueError(f"image smaller than {window}x{window} SSIM window")
    k1d = gaussian_kernel1d(_SIGMA, window // 2)
    mu_a = K.filter2_valid(ga, k1d)
    mu_b = K.filter2_valid(gb, k1d)
    e_aa = K.filter2_valid(ga * ga, k1d)
    e_bb = K.filter2_valid(gb * gb, k1d)
    e_ab = K.filter2_valid(ga * gb, k1d)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1, c2 = _K1 * _K1, _K2 * _K2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM keyed by image id, plus dataset means."""

    ids: list[str] = field(default_factory=list)
    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)

    def add(self, image_id: str, psnr_db: float, ssim_score: float) -> None:
        self.ids.append(image_id)
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_score)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "psnr", "ssim"])
            for i, p, s in zip(self.ids, self.psnr_values, self.ssim_values):
                w.writerow([i, repr(p), repr(s)])
            w.writerow(["mean", repr(self.mean_psnr), repr(self.mean_ssim)])


def compare_pairs(pairs, ids=None) -> MetricReport:
    """Score an iterable of (test_image, reference_image) pairs."""
    report = MetricReport()
    for idx, (img, ref) in enumerate(pairs):
        image_id = ids[idx] if ids is not None else f"{idx:06d}"
        report.add(image_id, psnr(img, ref), ssim(img, ref))
    return report
