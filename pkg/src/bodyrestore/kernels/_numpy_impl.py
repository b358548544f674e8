"""Pure-numpy kernel implementations.

Accumulation order matches the numba backend: patch offsets are visited
in (ki, kj) order and filters are applied rows-then-columns, so the two
backends produce identical float64 results.
"""

from __future__ import annotations

import numpy as np



def _mirror_pad_hw(x: np.ndarray, r: int) -> np.ndarray:
    pads = ((r, r), (r, r)) + ((0, 0),) * (x.ndim - 2)
    return np.pad(x, pads, mode="symmetric")


def filter2_same(x: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    """Separable 2D correlation, symmetric edge padding, output same size.

    x is (H,W) or (H,W,C); k1d is an odd-length 1D kernel applied along
    rows then columns.
    """
    r = len(k1d) // 2
    xp = _mirror_pad_hw(x.astype(np.float64, copy=False), r)
    h, w = x.shape[:2]
    tmp = np.zeros_like(xp[:, r:r + w])
    for i, kv in enumerate(k1d):
        tmp += kv * xp[:, i:i + w]
    out = np.zeros_like(tmp[r:r + h])
    for i, kv in enumerate(k1d):
        out += kv * tmp[i:i + h]
    return out


def filter2_valid(x: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    """Separable 2D correlation of a 2D array, valid region only."""
    h, w = x.shape
    m = len(k1d)
    x = x.astype(np.float64, copy=False)
    tmp = np.zeros((h, w - m + 1))
    for i, kv in enumerate(k1d):
        tmp += kv * x[:, i:i + w - m + 1]
    out = np.zeros((h - m + 1, w - m + 1))
    for i, kv in enumerate(k1d):
        out += kv * tmp[i:i + h - m + 1]
    return out


def block_dct_quant(chan: np.ndarray, dct8: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """8x8 block DCT, quantize, inverse DCT for one channel.

    chan is (H,W) float64 in the 0..255 domain with H and W multiples
    of 8; dct8 is the orthonormal 8x8 DCT-II matrix; qtable the 8x8
    quantization step table.
    """
    h, w = chan.shape
    blocks = chan.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coef = np.einsum("ij,bnjk,lk->bnil", dct8, blocks, dct8, optimize=True)
    coef = np.round(coef / qtable) * qtable
    rec = np.einsum("ji,bnjk,kl->bnil", dct8, coef, dct8, optimize=True) + 128.0
    return rec.transpose(0, 2, 1, 3).reshape(h, w)
