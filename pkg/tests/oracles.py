"""Independent reference implementations used as test oracles.

Deliberately naive (loops, direct formulas) and kept free of any code
shared with the fast paths they check.
"""

import math

import numpy as np

from bodyrestore.metrics import gaussian_kernel1d


def brute_force_alpha_bar(beta):
    out = np.empty_like(beta)
    prod = 1.0
    for i, b in enumerate(beta):
        prod = prod * (1.0 - b)
        out[i] = prod
    return out


def brute_force_mse(a, b):
    total = 0.0
    fa, fb = a.ravel(), b.ravel()
    for i in range(fa.size):
        d = float(fa[i]) - float(fb[i])
        total += d * d
    return total / fa.size


def brute_force_psnr(a, b):
    mse = brute_force_mse(a, b)
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def brute_force_ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct sliding-window SSIM, independent of the filtering fast path."""
    def gray(img):
        if img.ndim == 2:
            return img.astype(np.float64)
        return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]

    ga, gb = gray(a), gray(b)
    k = gaussian_kernel1d(sigma, window // 2)
    w2d = np.outer(k, k)
    h, w = ga.shape
    c1, c2 = k1 * k1, k2 * k2
    vals = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            pa = ga[i:i + window, j:j + window]
            pb = gb[i:i + window, j:j + window]
            mu_a = (w2d * pa).sum()
            mu_b = (w2d * pb).sum()
            var_a = (w2d * pa * pa).sum() - mu_a ** 2
            var_b = (w2d * pb * pb).sum() - mu_b ** 2
            cov = (w2d * pa * pb).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(vals))
