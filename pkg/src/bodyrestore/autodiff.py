"""Tape-based reverse-mode autodiff over numpy arrays.

Just enough machinery for the toy networks in this package: elementwise
arithmetic with broadcasting, matmul, 3x3/1x1 convolutions, 2x
pooling/upsampling, channel concat, smooth activations, and a few
reductions. Graphs are built lazily: an op whose inputs all have
``requires=False`` produces a constant, so inference passes carry no
tape.

Convolutions use the shift-and-matmul formulation (one BLAS call per
kernel tap); no patch matrices are ever materialized.

dtype follows the inputs (float32 for training, float64 for gradient
probes); scalar reductions accumulate in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np



class Tensor:
    __slots__ = ("data", "grad", "parents", "bw", "requires")

    def __init__(self, data, parents: tuple = (), bw: Callable | None = None,
                 requires: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.bw = bw
        self.requires = requires or any(p.requires for p in parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=self.data.dtype)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of self (scalar unless seed given) into leaves."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        self._acc(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node.bw is not None and node.grad is not None:
                node.bw(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def constant_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def leaf(x, dtype=None) -> Tensor:
    arr = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x)
    return Tensor(arr.copy(), requires=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    a = constant(a)
    b = constant_like(b, a)
    out = Tensor(a.data + b.data, (a, b))
    if out.requires:
        def bw(g):
            if a.requires:
                a._acc(_unbroadcast(g, a.data.shape))
            if b.requires:
                b._acc(_unbroadcast(g, b.data.shape))
        out.bw = bw
    return out


def sub(a: Tensor, b) -> Tensor:
    a = constant(a)
    b = constant_like(b, a)
    out = Tensor(a.data - b.data, (a, b))
    if out.requires:
        def bw(g):
            if a.requires:
                a._acc(_unbroadcast(g, a.data.shape))
            if b.requires:
                b._acc(_unbroadcast(-g, b.data.shape))
        out.bw = bw
    return out


def mul(a: Tensor, b) -> Tensor:
    a = constant(a)
    b = constant_like(b, a)
    out = Tensor(a.data * b.data, (a, b))
    if out.requires:
        def bw(g):
            if a.requires:
                a._acc(_unbroadcast(g * b.data, a.data.shape))
            if b.requires:
                b._acc(_unbroadcast(g * a.data, b.data.shape))
        out.bw = bw
    return out


def div(a: Tensor, b) -> Tensor:
    a = constant(a)
    b = constant_like(b, a)
    out = Tensor(a.data / b.data, (a, b))
    if out.requires:
        def bw(g):
            if a.requires:
                a._acc(_unbroadcast(g / b.data, a.data.shape))
            if b.requires:
                b._acc(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        out.bw = bw
    return out


def sqrt(a: Tensor) -> Tensor:
    a = constant(a)
    y = np.sqrt(a.data)
    out = Tensor(y, (a,))
    if out.requires:
        def bw(g):
            a._acc(g / (2.0 * y))
        out.bw = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    out = Tensor(a.data @ b.data, (a, b))
    if out.requires:
        def bw(g):
            if a.requires:
                a._acc(g @ b.data.T)
            if b.requires:
                b._acc(a.data.T @ g)
        out.bw = bw
    return out


def silu(a: Tensor) -> Tensor:
    a = constant(a)
    with np.errstate(over="ignore"):  # exp overflow saturates correctly
        s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * s, (a,))
    if out.requires:
        def bw(g):
            a._acc(g * (s * (1.0 + a.data * (1.0 - s))))
        out.bw = bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = constant(a)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, (a,))
    if out.requires:
        def bw(g):
            a._acc(g * s * (1.0 - s))
        out.bw = bw
    return out


def clip01(a: Tensor) -> Tensor:
    """Clamp to [0,1]; gradient passes inside the (inclusive) range."""
    a = constant(a)
    out = Tensor(np.clip(a.data, 0.0, 1.0), (a,))
    if out.requires:
        inside = (a.data >= 0.0) & (a.data <= 1.0)
        def bw(g):
            a._acc(g * inside)
        out.bw = bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = constant(a)
    out = Tensor(a.data.reshape(shape), (a,))
    if out.requires:
        def bw(g):
            a._acc(g.reshape(a.data.shape))
        out.bw = bw
    return out


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1), tuple(parts))
    if out.requires:
        splits = np.cumsum([p.data.shape[-1] for p in parts])[:-1]
        def bw(g):
            for p, gp in zip(parts, np.split(g, splits, axis=-1)):
                if p.requires:
                    p._acc(gp)
        out.bw = bw
    return out


def avgpool2(a: Tensor) -> Tensor:
    a = constant(a)
    n, h, w, c = a.data.shape
    y = a.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    out = Tensor(y.astype(a.dtype, copy=False), (a,))
    if out.requires:
        def bw(g):
            gy = np.broadcast_to((g * 0.25)[:, :, None, :, None, :],
                                 (n, h // 2, 2, w // 2, 2, c))
            a._acc(gy.reshape(n, h, w, c))
        out.bw = bw
    return out


def upsample2(a: Tensor) -> Tensor:
    a = constant(a)
    n, h, w, c = a.data.shape
    y = np.repeat(np.repeat(a.data, 2, axis=1), 2, axis=2)
    out = Tensor(y, (a,))
    if out.requires:
        def bw(g):
            a._acc(g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))
        out.bw = bw
    return out


def conv3x3(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1. x (N,H,W,Cin), w (3,3,Cin,Cout), b (Cout,).

    Shift-and-matmul formulation: one BLAS matmul per kernel tap, no
    materialized patch matrix. The padded input is retained for the
    backward taps.
    """
    x, w, b = constant(x), constant(w), constant(b)
    n, h, wd, cin = x.data.shape
    cout = w.data.shape[-1]
    ho, wo = (h + 2 - 3) // stride + 1, (wd + 2 - 3) // stride + 1
    xp = np.zeros((n, h + 2, wd + 2, cin), dtype=x.data.dtype)
    xp[:, 1:h + 1, 1:wd + 1] = x.data

    def tap(ki, kj):
        return xp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :] \
            .reshape(-1, cin)

    out_arr = np.empty((n, ho, wo, cout), dtype=x.data.dtype)
    out_arr[:] = b.data
    flat = out_arr.reshape(-1, cout)
    for ki in range(3):
        for kj in range(3):
            flat += tap(ki, kj) @ w.data[ki, kj]
    out = Tensor(out_arr, (x, w, b))
    if out.requires:
        def bw(g):
            gm = g.reshape(-1, cout)
            if b.requires:
                b._acc(gm.sum(axis=0))
            if w.requires:
                dw = np.empty_like(w.data)
                for ki in range(3):
                    for kj in range(3):
                        dw[ki, kj] = tap(ki, kj).T @ gm
                w._acc(dw)
            if x.requires:
                dxp = np.zeros_like(xp)
                for ki in range(3):
                    for kj in range(3):
                        dxp[:, ki:ki + stride * ho:stride,
                            kj:kj + stride * wo:stride, :] += \
                            (gm @ w.data[ki, kj].T).reshape(n, ho, wo, cin)
                x._acc(dxp[:, 1:h + 1, 1:wd + 1])
        out.bw = bw
    return out


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise convolution. x (N,H,W,Cin), w (Cin,Cout), b (Cout,)."""
    x, w, b = constant(x), constant(w), constant(b)
    n, h, wd, cin = x.data.shape
    cout = w.data.shape[-1]
    flat = x.data.reshape(-1, cin)
    y = (flat @ w.data + b.data).reshape(n, h, wd, cout)
    out = Tensor(y, (x, w, b))
    if out.requires:
        def bw(g):
            gm = g.reshape(-1, cout)
            if w.requires:
                w._acc(flat.T @ gm)
            if b.requires:
                b._acc(gm.sum(axis=0))
            if x.requires:
                x._acc((gm @ w.data.T).reshape(n, h, wd, cin))
        out.bw = bw
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor(np.asarray(y), (a,))
    if out.requires:
        def bw(g):
            if axis is None:
                ga = np.broadcast_to(g, a.data.shape)
            elif keepdims:
                ga = np.broadcast_to(g, a.data.shape)
            else:
                ga = np.broadcast_to(np.expand_dims(g, axis), a.data.shape)
            a._acc(ga.astype(a.dtype, copy=False))
        out.bw = bw
    return out


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the last axis."""
    a = constant(a)
    out = Tensor(a.data[..., start:stop], (a,))
    if out.requires:
        def bw(g):
            ga = np.zeros(a.data.shape, dtype=a.dtype)
            ga[..., start:stop] = g
            a._acc(ga)
        out.bw = bw
    return out


def mean_all(a: Tensor) -> Tensor:
    """Mean over all elements, accumulated in float64."""
    a = constant(a)
    n = a.data.size
    y = np.asarray(a.data.mean(dtype=np.float64))
    out = Tensor(y, (a,))
    if out.requires:
        def bw(g):
            a._acc(np.full(a.data.shape, float(g) / n, dtype=a.dtype))
        out.bw = bw
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = constant(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = Tensor(y, (a,))
    if out.requires:
        sm = np.exp(y)
        def bw(g):
            a._acc(g - sm * g.sum(axis=axis, keepdims=True))
        out.bw = bw
    return out


def gradcheck_scalar(fn, x0: np.ndarray, h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Analytic and central-difference gradients of a scalar fn(leaf Tensor).

    Returns (analytic, numeric); callers assert on relative error.
    """
    x = leaf(x0.astype(np.float64))
    out = fn(x)
    out.backward()
    analytic = x.grad.copy()
    numeric = np.zeros_like(x0, dtype=np.float64)
    flat = x0.astype(np.float64).ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = fn(Tensor(xp.reshape(x0.shape))).item()
        fm = fn(Tensor(xm.reshape(x0.shape))).item()
        numeric.ravel()[i] = (fp - fm) / (2 * h)
    return analytic, numeric
