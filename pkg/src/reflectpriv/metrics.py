"""Image quality and string distance metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class QualityScore:
    psnr: float
    ssim: float

    def __post_init__(self):
        if not -1.0 - 1e-12 <= self.ssim <= 1.0 + 1e-12:
            raise MetricError(f"ssim out of range: {self.ssim}")
        if not (self.psnr >= 0 or math.isinf(self.psnr)):
            raise MetricError(f"psnr must be >= 0 or +inf: {self.psnr}")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, mask=None) -> float:
    """10 log10(1 / MSE) over all channels (and masked pixels); +inf when equal."""
    a, b = _pair(a, b)
    d = (a - b) ** 2
    if mask is not None:
        d = d[np.asarray(mask, bool)]
    if d.size == 0:
        raise MetricError("psnr over an empty mask")
    mse = float(d.mean())
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Per-window SSIM over valid window positions, shape (H-10, W-10, C)."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise MetricError(f"ssim needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window()
    h = SSIM_WIN // 2
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2

    def filt(x):
        out = np.stack([ndimage.correlate(x[..., c], g, mode="constant") for c in range(x.shape[2])],
                       axis=-1)
        return out[h:-h, h:-h]

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, mask=None) -> float:
    """Mean windowed SSIM over windows and channels.

    With ``mask`` only windows centered on masked pixels are averaged.
    """
    m = ssim_map(a, b)
    if mask is not None:
        h = SSIM_WIN // 2
        sel = np.asarray(mask, bool)[h:-h, h:-h]
        if not sel.any():
            raise MetricError("ssim over an empty mask")
        m = m[sel]
    return float(np.clip(m.mean(), -1.0, 1.0))


def quality(a, b, mask=None) -> QualityScore:
    return QualityScore(psnr(a, b, mask), ssim(a, b, mask))


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]
