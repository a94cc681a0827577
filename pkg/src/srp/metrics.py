"""Image quality metrics with fixed, golden-stable conventions.

PSNR uses a caller-supplied peak; an exact match reports the configured cap
with a flag instead of infinity. SSIM is the uniform-window variant,
window 7, C1 = (0.01 peak)², C2 = (0.03 peak)², averaged over windows fully
inside the image.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter

from .operators import deinterleave


class PsnrValue(NamedTuple):
    db: float
    capped: bool


def magnitude(v):
    """Per-pixel magnitude of an interleaved complex vector."""
    z = deinterleave(v)
    return np.abs(z)


def psnr(x_hat, x_true, peak, cap_db=99.0):
    """10 log10(peak² / MSE); an exact match returns (cap_db, True)."""
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    x_true = np.asarray(x_true, dtype=float).ravel()
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x_true.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x_hat - x_true) ** 2))
    if mse == 0.0:
        return PsnrValue(float(cap_db), True)
    value = 10.0 * np.log10(peak * peak / mse)
    if value >= cap_db:
        return PsnrValue(float(cap_db), True)
    return PsnrValue(float(value), False)


def ssim(x_hat, x_true, peak, window=7, k1=0.01, k2=0.03):
    """Mean local structural similarity over uniform sliding windows."""
    a = np.asarray(x_hat, dtype=float)
    b = np.asarray(x_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if min(a.shape) < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    uf = lambda img: uniform_filter(img, size=window, mode="constant")
    mu_a = uf(a)
    mu_b = uf(b)
    var_a = uf(a * a) - mu_a * mu_a
    var_b = uf(b * b) - mu_b * mu_b
    cov = uf(a * b) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num / den

    # keep windows fully inside the image
    r = window // 2
    return float(np.mean(smap[r : a.shape[0] - r, r : a.shape[1] - r]))
