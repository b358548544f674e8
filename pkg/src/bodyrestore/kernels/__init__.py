"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops; the numpy backend is a
pure-vectorized fallback. Selection order:

1. ``BODYRESTORE_BACKEND`` env var: ``numba``, ``numpy``, or ``auto``.
2. ``auto`` (default): numba if importable, else numpy.

The separable filters agree bit for bit across backends (identical
accumulation order); the block-DCT kernel agrees to BLAS rounding.
Within one backend every kernel is deterministic.
``benchmarks/bench_kernels.py`` compares throughput.
"""

from __future__ import annotations

import os

from . import _numpy_impl

_FUNCS = ("filter2_same", "filter2_valid", "block_dct_quant")


def _load(name: str):
    if name == "numpy":
        return _numpy_impl, "numpy"
    try:
        from . import _numba_impl
        return _numba_impl, "numba"
    except ImportError:
        if name == "numba":
            raise
        return _numpy_impl, "numpy"


_requested = os.environ.get("BODYRESTORE_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"BODYRESTORE_BACKEND must be auto|numba|numpy, got {_requested!r}")
_impl, BACKEND = _load(_requested if _requested != "auto" else "try-numba")

filter2_same = _impl.filter2_same
filter2_valid = _impl.filter2_valid
block_dct_quant = _impl.block_dct_quant


def get_impl(name: str):
    """Return a specific backend module (for tests and benchmarks)."""
    impl, resolved = _load(name)
    if name != "auto" and resolved != name:
        raise ImportError(f"backend {name!r} unavailable")
    return impl
