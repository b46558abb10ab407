"""Recovery quality metrics: PSNR, SSIM, NRMSE and R^2."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


def _pair(x_hat, x):
    a = np.asarray(x_hat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(x_hat, x, max_value: float = 1.0) -> float:
    """``10 log10(max^2 / MSE)`` in dB; ``inf`` for an exact match."""
    a, b = _pair(x_hat, x)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / mse)


def nrmse(x_hat, x) -> float:
    """``||x_hat - x||_F / ||x||_F``."""
    a, b = _pair(x_hat, x)
    ref = float(np.linalg.norm(b.ravel()))
    if ref == 0.0:
        raise ValueError("NRMSE undefined for a zero reference")
    return float(np.linalg.norm((a - b).ravel())) / ref


def r2(x_hat, x) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    a, b = _pair(x_hat, x)
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined for a constant reference")
    return 1.0 - float(np.sum((b - a) ** 2)) / ss_tot


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation with a symmetric kernel
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim_2d(a: np.ndarray, b: np.ndarray, data_range: float = 1.0,
            win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM of two 2-D images using a Gaussian window, valid region only."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError("ssim_2d expects 2-D images")
    if min(a.shape) < win_size:
        raise ValueError(f"image {a.shape} smaller than the {win_size}x{win_size} window")
    g = gaussian_window(win_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    # (co)variances are shift invariant; centering first limits cancellation
    ac, bc = a - a.mean(), b - b.mean()
    ma, mb = _filter_valid(ac, g), _filter_valid(bc, g)
    saa = _filter_valid(ac * ac, g) - ma ** 2
    sbb = _filter_valid(bc * bc, g) - mb ** 2
    sab = _filter_valid(ac * bc, g) - ma * mb
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(x_hat, x, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """SSIM averaged over 2-D slices.

    The first two modes are treated as spatial; every combination of the
    remaining indices (bands, channels, frames) gives one slice.
    """
    a, b = _pair(x_hat, x)
    if a.ndim < 2:
        raise ValueError("SSIM needs at least two spatial modes")
    if np.array_equal(a, b):
        return 1.0
    h, w = a.shape[:2]
    a2 = a.reshape(h, w, -1)
    b2 = b.reshape(h, w, -1)
    vals = [ssim_2d(a2[:, :, k], b2[:, :, k], data_range, win_size, sigma)
            for k in range(a2.shape[2])]
    return float(np.mean(vals))


@dataclass
class MetricsReport:
    psnr: float
    ssim: Optional[float]
    nrmse: float
    r2: float
    per_band: Optional[list] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["per_band"] is None:
            del d["per_band"]
        if math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d


def evaluate_all(x_hat, x, max_value: float = 1.0, spatial: bool = True) -> MetricsReport:
    """All four metrics; SSIM is None when the data have no usable 2-D slices."""
    a, b = _pair(x_hat, x)
    s = None
    if spatial and a.ndim >= 2 and min(a.shape[:2]) >= 11:
        s = ssim(a, b, data_range=max_value)
    return MetricsReport(psnr(a, b, max_value), s, nrmse(a, b), r2(a, b))
