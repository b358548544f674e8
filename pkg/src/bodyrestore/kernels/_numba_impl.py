"""Numba-JIT kernel implementations.

Loop nests mirror the numpy backend's accumulation order. All kernels
are single-threaded on purpose: reductions stay deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit



@njit(cache=True)
def _mirror(i, n):
    # symmetric (half-sample) reflection, matches np.pad mode="symmetric"
    if i < 0:
        i = -1 - i
    if i >= n:
        i = 2 * n - 1 - i
    return i


@njit(cache=True)
def _filter2_same_core(x, k1d, out):
    h, w, c = x.shape
    m = k1d.shape[0]
    r = m // 2
    tmp = np.zeros((h + 2 * r, w, c))
    for i in range(h + 2 * r):
        si = _mirror(i - r, h)
        for j in range(w):
            for t in range(m):
                sj = _mirror(j + t - r, w)
                for cc in range(c):
                    tmp[i, j, cc] += k1d[t] * x[si, sj, cc]
    for i in range(h):
        for j in range(w):
            for t in range(m):
                for cc in range(c):
                    out[i, j, cc] += k1d[t] * tmp[i + t, j, cc]
    return out


def filter2_same(x: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    squeeze = x.ndim == 2
    x3 = x[..., None] if squeeze else x
    out = np.zeros(x3.shape, dtype=np.float64)
    _filter2_same_core(np.ascontiguousarray(x3, dtype=np.float64),
                       np.ascontiguousarray(k1d, dtype=np.float64), out)
    return out[..., 0] if squeeze else out


@njit(cache=True)
def _filter2_valid_core(x, k1d, out):
    h, w = x.shape
    m = k1d.shape[0]
    tmp = np.zeros((h, w - m + 1))
    for i in range(h):
        for j in range(w - m + 1):
            for t in range(m):
                tmp[i, j] += k1d[t] * x[i, j + t]
    for i in range(h - m + 1):
        for j in range(w - m + 1):
            for t in range(m):
                out[i, j] += k1d[t] * tmp[i + t, j]
    return out


def filter2_valid(x: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    h, w = x.shape
    m = len(k1d)
    out = np.zeros((h - m + 1, w - m + 1))
    _filter2_valid_core(np.ascontiguousarray(x, dtype=np.float64),
                        np.ascontiguousarray(k1d, dtype=np.float64), out)
    return out


@njit(cache=True)
def _block_dct_quant_core(chan, dct8, qtable, out):
    h, w = chan.shape
    blk = np.empty((8, 8))
    coef = np.empty((8, 8))
    for bi in range(h // 8):
        for bj in range(w // 8):
            for i in range(8):
                for j in range(8):
                    blk[i, j] = chan[bi * 8 + i, bj * 8 + j] - 128.0
            # coef = dct8 @ blk @ dct8.T, quantized
            for i in range(8):
                for j in range(8):
                    s = 0.0
                    for u in range(8):
                        t = 0.0
                        for v in range(8):
                            t += blk[u, v] * dct8[j, v]
                        s += dct8[i, u] * t
                    coef[i, j] = np.round(s / qtable[i, j]) * qtable[i, j]
            for i in range(8):
                for j in range(8):
                    s = 0.0
                    for u in range(8):
                        t = 0.0
                        for v in range(8):
                            t += coef[u, v] * dct8[v, j]
                        s += dct8[u, i] * t
                    out[bi * 8 + i, bj * 8 + j] = s + 128.0
    return out


def block_dct_quant(chan: np.ndarray, dct8: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    out = np.empty_like(chan, dtype=np.float64)
    _block_dct_quant_core(np.ascontiguousarray(chan, dtype=np.float64),
                          np.ascontiguousarray(dct8), np.ascontiguousarray(qtable), out)
    return out
