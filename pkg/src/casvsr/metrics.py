"""PSNR and SSIM reference implementations (float64 throughout).

PSNR = 10*log10(1/MSE) for a dynamic range of 1.0; identical images report
+inf. SSIM follows the standard constants: 11x11 Gaussian window with
sigma 1.5, k1 = 0.01, k2 = 0.03, computed per channel on the valid
(unpadded) region and averaged. Y-channel mode uses ITU-R BT.601 weights
(0.299, 0.587, 0.114).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BT601 = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class MetricReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    channel_mode: str = "rgb"

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


def to_y(img: np.ndarray) -> np.ndarray:
    """[3,H,W] -> luma [1,H,W] with BT.601 weights."""
    if img.shape[0] != 3:
        raise ValueError(f"Y conversion expects 3 channels, got {img.shape[0]}")
    return np.tensordot(BT601, img.astype(np.float64), axes=(0, 0))[None]


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    win = sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", win, kernel)


def ssim_single(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """SSIM of two 2-D images over the valid region of an 11x11 window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise ValueError(f"ssim needs extents >= 11, got {a.shape}")
    kernel = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu1 = _filter_valid(a, kernel)
    mu2 = _filter_valid(b, kernel)
    s11 = _filter_valid(a * a, kernel) - mu1 * mu1
    s22 = _filter_valid(b * b, kernel) - mu2 * mu2
    s12 = _filter_valid(a * b, kernel) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """SSIM of [C,H,W] (or [H,W]) images; channels averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        return ssim_single(a, b, data_range)
    return float(np.mean([ssim_single(a[c], b[c], data_range) for c in range(a.shape[0])]))


def frame_metrics(a: np.ndarray, b: np.ndarray, channel_mode: str = "rgb") -> tuple[float, float]:
    """(PSNR, SSIM) for one frame pair [3,H,W] in [0,1]."""
    if channel_mode == "y":
        a, b = to_y(a), to_y(b)
    elif channel_mode != "rgb":
        raise ValueError(f"channel_mode must be 'rgb' or 'y', got {channel_mode!r}")
    return psnr(a, b), ssim(a, b)


def clip_metrics(frames_a: list[np.ndarray], frames_b: list[np.ndarray], channel_mode: str = "rgb") -> MetricReport:
    if len(frames_a) != len(frames_b):
        raise ValueError(f"frame count mismatch: {len(frames_a)} vs {len(frames_b)}")
    report = MetricReport(channel_mode=channel_mode)
    for a, b in zip(frames_a, frames_b):
        p, s = frame_metrics(a, b, channel_mode)
        report.psnr.append(p)
        report.ssim.append(s)
    return report
