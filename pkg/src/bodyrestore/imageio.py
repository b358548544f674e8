"""PNG reading/writing and float<->uint8 conversion.

Images are H x W x C (or H x W) float arrays in [0,1], channel-last,
everywhere in this package. Files are 8-bit PNG.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MissingArtifactError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / np.float32(255.0)


def save_image(path: str | Path, img: np.ndarray) -> None:
    arr = to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode).save(str(path), format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"image not found: {p}")
    with Image.open(p) as im:
        im = im.convert("RGB") if im.mode not in ("L", "RGB") else im
        return from_uint8(np.asarray(im))


def bilinear_resize(img: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling to (H,W), half-pixel-centered sampling grid."""
    th, tw = target_hw
    h, w = img.shape[:2]
    if (h, w) == (th, tw):
        return img.copy()
    ys = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if img.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype, copy=False)


def save_index_map(path: str | Path, ids: np.ndarray) -> None:
    """Store small integer label maps (e.g. part ids) as raw 8-bit PNG."""
    Image.fromarray(ids.astype(np.uint8), "L").save(str(path), format="PNG")


def load_index_map(path: str | Path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"index map not found: {p}")
    with Image.open(p) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)
