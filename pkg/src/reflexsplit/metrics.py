"""Image-quality metrics, inter-stream correlation and PCA variance curves.

Metrics take numpy arrays ``H x W x 3`` (or tensors, which are converted).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.signal import convolve2d

LUMA = (0.299, 0.587, 0.114)
SSIM_K1, SSIM_K2 = 0.01, 0.03


class DegenerateInputWarning(UserWarning):
    pass


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def luminance(img: np.ndarray) -> np.ndarray:
    img = _as_array(img)
    if img.ndim == 2:
        return img
    return img @ np.asarray(LUMA)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity of the luminance channels (valid-region Gaussian filtering)."""
    x, y = luminance(a), luminance(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)

    def filt(z):
        return convolve2d(z, w, mode="valid")

    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ncc(f_t, f_r) -> float:
    """Pearson correlation of the flattened maps; 0 (with a warning) if either is constant."""
    a, b = _as_array(f_t).ravel(), _as_array(f_r).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        warnings.warn("zero-variance input to ncc; returning 0", DegenerateInputWarning)
        return 0.0
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def window_pool(fmap: torch.Tensor, window: int) -> torch.Tensor:
    """Mean of each (reflect-padded) attention window: ``(B, C, H, W) -> (B, C, nh, nw)``."""
    h, w = fmap.shape[-2:]
    wh, ww = min(window, h), min(window, w)
    pad_h, pad_w = (-h) % wh, (-w) % ww
    if pad_h or pad_w:
        fmap = F.pad(fmap, (0, pad_w, 0, pad_h), mode="reflect")
    return F.avg_pool2d(fmap, (wh, ww))


def stream_ncc(f_t: torch.Tensor, f_r: torch.Tensor, window: int) -> float:
    return ncc(window_pool(f_t, window), window_pool(f_r, window))


@dataclass(frozen=True)
class VarianceCurve:
    cumulative: np.ndarray  # cumulative fraction after k+1 components

    def components_for(self, fraction: float = 0.95) -> int:
        return int(np.searchsorted(self.cumulative, fraction - 1e-12) + 1)

    def rows(self):
        return [(k + 1, float(v)) for k, v in enumerate(self.cumulative)]


def pca_cumulative_variance(samples) -> VarianceCurve:
    """Cumulative explained-variance fractions of the sample covariance spectrum.

    ``samples`` is ``n x d`` (one flattened feature map per row).  The spectrum
    comes from the SVD of the centred data, equal to the eigenvalues of the
    sample covariance up to the ``n - 1`` factor that cancels in the ratio.
    """
    x = _as_array(samples)
    if x.ndim != 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    x = x - x.mean(axis=0)
    s = np.linalg.svd(x, compute_uv=False)
    var = s**2
    total = var.sum()
    if total <= 0:
        raise ValueError("samples have zero variance")
    cum = np.cumsum(var) / total
    cum[-1] = 1.0
    return VarianceCurve(np.minimum(cum, 1.0))
