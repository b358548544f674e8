"""Synthetic coupled degradation: blur, downsampling, noise, JPEG-like
quantization.

The pipeline that manufactures low-quality inputs from clean images.
Default stage order is blur -> downsample (area) -> re-upsample
(nearest) -> additive Gaussian noise -> JPEG-like compression; every
stage is deterministic given (input, spec, seed) and the output is
clamped to [0,1] at the original shape.

JPEG is approximated by per-channel 8x8 block DCT quantization with the
ITU-T T.81 example luminance table (no entropy coding, no chroma
subsampling: only the distortion matters here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .metrics import gaussian_kernel1d
from .rng import substream

DEFAULT_ORDER = "blur-down-noise-jpeg"
_STAGES = ("blur", "down", "noise", "jpeg")

# ITU-T T.81, Annex K.1 example luminance quantization table
JPEG_LUMA_QUANT = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def _dct8() -> np.ndarray:
    n = 8
    d = np.zeros((n, n))
    for k in range(n):
        for i in range(n):
            d[k, i] = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    d *= np.sqrt(2.0 / n)
    d[0] *= np.sqrt(0.5)
    return d


_DCT8 = _dct8()


@dataclass(frozen=True)
class DegradationSpec:
    blur_sigma: float = 0.0
    down_factor: int = 1
    noise_sigma: float = 0.0
    jpeg_quality: int | None = None
    order: str = DEFAULT_ORDER

    def __post_init__(self):
        if self.blur_sigma < 0.0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.down_factor < 1:
            raise ValueError(f"down_factor must be >= 1, got {self.down_factor}")
        if not (0.0 <= self.noise_sigma <= 1.0):
            raise ValueError(f"noise_sigma must be in [0,1], got {self.noise_sigma}")
        if self.jpeg_quality is not None and not (1 <= self.jpeg_quality <= 100):
            raise ValueError(f"jpeg_quality must be in [1,100], got {self.jpeg_quality}")
        stages = self.order.split("-")
        if sorted(stages) != sorted(_STAGES):
            raise ValueError(f"order must permute {_STAGES}, got {self.order!r}")


def quant_table(quality: int) -> np.ndarray:
    """Luminance table scaled by quality per the usual 5000/Q convention."""
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((JPEG_LUMA_QUANT * scale + 50.0) / 100.0), 1.0, 255.0)


def jpeg_like(image: np.ndarray, quality: int) -> np.ndarray:
    """Per-channel 8x8 block DCT quantization round trip."""
    if not (1 <= quality <= 100):
        raise ValueError(f"quality must be in [1,100], got {quality}")
    single = image.ndim == 2
    img = image[..., None] if single else image
    h, w, c = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    q = quant_table(quality)
    out = np.empty_like(padded, dtype=np.float64)
    for ch in range(c):
        out[..., ch] = K.block_dct_quant(padded[..., ch] * 255.0, _DCT8, q)
    out = np.clip(out[:h, :w] / 255.0, 0.0, 1.0)
    out = out.astype(image.dtype, copy=False)
    return out[..., 0] if single else out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return image
    radius = max(1, int(np.ceil(3.0 * sigma)))
    k1d = gaussian_kernel1d(sigma, radius)
    return K.filter2_same(image, k1d).astype(image.dtype, copy=False)


def down_up(image: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsample then nearest re-upsample to original size."""
    if factor == 1:
        return image
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"dims {h}x{w} not divisible by factor {factor}")
    small = image.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))
    up = np.repeat(np.repeat(small, factor, axis=0), factor, axis=1)
    return up.reshape(image.shape).astype(image.dtype, copy=False)


def degrade(I_HQ: np.ndarray, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Apply the coupled degradation pipeline; output in [0,1], same shape."""
    if I_HQ.min() < 0.0 or I_HQ.max() > 1.0:
        raise ValueError("input image must lie in [0,1]")
    img = I_HQ
    for stage in spec.order.split("-"):
        if stage == "blur" and spec.blur_sigma > 0.0:
            img = gaussian_blur(img, spec.blur_sigma)
        elif stage == "down" and spec.down_factor > 1:
            img = down_up(img, spec.down_factor)
        elif stage == "noise" and spec.noise_sigma > 0.0:
            rng = substream(seed, "degrade-noise")
            img = img + spec.noise_sigma * rng.standard_normal(img.shape).astype(img.dtype)
        elif stage == "jpeg" and spec.jpeg_quality is not None:
            img = jpeg_like(np.clip(img, 0.0, 1.0), spec.jpeg_quality)
    return np.clip(img, 0.0, 1.0).astype(I_HQ.dtype, copy=False)
