#!/usr/bin/env python3
"""Throughput comparison of the numba and numpy kernel backends.

Times the three hot kernels (degradation blur, SSIM window filtering,
JPEG block DCT) on workloads shaped like the real pipeline and prints a
table. Backend selection for the package itself goes through the
BODYRESTORE_BACKEND env var; here both implementations are loaded
side by side.
"""

import time

import numpy as np

from bodyrestore import kernels
from bodyrestore.degradation import _DCT8, quant_table
from bodyrestore.metrics import gaussian_kernel1d


def timeit(fn, repeat=20):
    fn()  # warm-up (JIT compile for numba)
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def main():
    rng = np.random.default_rng(0)
    img = rng.random((128, 64, 3))
    gray = rng.random((128, 64))
    chan = rng.random((128, 64)) * 255.0
    blur_k = gaussian_kernel1d(1.0, 3)
    ssim_k = gaussian_kernel1d(1.5, 5)
    q50 = quant_table(50)

    cases = [
        ("filter2_same 128x64x3 (blur)",
         lambda impl: impl.filter2_same(img, blur_k)),
        ("filter2_valid 128x64 (SSIM window)",
         lambda impl: impl.filter2_valid(gray, ssim_k)),
        ("block_dct_quant 128x64 (JPEG)",
         lambda impl: impl.block_dct_quant(chan, _DCT8, q50)),
    ]

    impls = {"numpy": kernels.get_impl("numpy")}
    try:
        impls["numba"] = kernels.get_impl("numba")
    except ImportError:
        print("numba unavailable; benchmarking numpy only")

    header = f"{'kernel':40s} " + " ".join(f"{name:>12s}" for name in impls)
    if len(impls) == 2:
        header += f" {'speedup':>9s}"
    print(header)
    for label, call in cases:
        times = {name: timeit(lambda i=impl: call(i)) for name, impl in impls.items()}
        row = " ".join(f"{t * 1e3:9.3f} ms" for t in times.values())
        if len(impls) == 2:
            row += f" {times['numpy'] / times['numba']:8.2f}x"
        print(f"{label:40s} {row}")


if __name__ == "__main__":
    main()
