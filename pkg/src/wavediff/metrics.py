"""ROI-restricted image-quality metrics: MSE, PSNR, SSIM.

All three operate in image space on intensities rescaled to a declared range
(default [0, 1] with data_range 1, which makes PSNR = -10 log10(MSE) an exact
identity). The ROI restricts the reduction: squared errors are averaged over
ROI voxels only, and the SSIM map is averaged over voxels whose center lies
in the ROI. Local SSIM statistics use a Gaussian window (default sigma 1.5
truncated to a 7^3 support) with the conventional constants
C1 = (0.01 L)^2 and C2 = (0.03 L)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import EmptyROI, InvalidRange, ShapeMismatch, WindowTooLarge
from .volume import MaskVolume, Volume


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float  # dB; +inf when the ROI residual is exactly zero
    ssim: float
    roi_voxels: int

    def to_record(self, case_id: str = "") -> dict:
        return {
            "case_id": case_id,
            "mse": self.mse,
            "psnr": None if math.isinf(self.psnr) else self.psnr,
            "ssim": self.ssim,
            "roi_voxels": self.roi_voxels,
        }


def _data(x) -> np.ndarray:
    if isinstance(x, Volume):
        return x.data
    if isinstance(x, MaskVolume):
        return x.data
    return np.asarray(x)


def _checked(pred, ref, roi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p, r, m = _data(pred).astype(np.float64), _data(ref).astype(np.float64), _data(roi)
    if p.shape != r.shape or p.shape != m.shape:
        raise ShapeMismatch(f"shapes differ: pred {p.shape}, ref {r.shape}, roi {m.shape}")
    m = m > 0
    if not m.any():
        raise EmptyROI("metric ROI is empty")
    return p, r, m


def mse_roi(pred, ref, roi) -> float:
    """Mean squared difference over ROI voxels only."""
    p, r, m = _checked(pred, ref, roi)
    d = p[m] - r[m]
    return float(np.mean(d * d))


def psnr_roi(pred, ref, roi, data_range: float = 1.0) -> float:
    """10 log10(L^2 / MSE) in dB; +inf when MSE is exactly 0."""
    if data_range <= 0:
        raise InvalidRange(f"data_range must be > 0, got {data_range}")
    mse = mse_roi(pred, ref, roi)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def _local_stats(x: np.ndarray, sigma: float, truncate: float) -> np.ndarray:
    return gaussian_filter(x, sigma=sigma, truncate=truncate, mode="reflect")


def ssim_roi(
    pred, ref, roi, data_range: float = 1.0, window: int = 7, sigma: float = 1.5
) -> float:
    """Mean of the local SSIM map over the ROI.

    ``window`` is the (odd) support of the Gaussian weighting along each axis;
    the Gaussian is truncated to radius (window-1)/2.
    """
    if data_range <= 0 or sigma <= 0:
        raise InvalidRange(f"need data_range > 0 and sigma > 0, got {data_range}, {sigma}")
    if window % 2 == 0 or window < 3:
        raise InvalidRange(f"window must be odd and >= 3, got {window}")
    p, r, m = _checked(pred, ref, roi)
    if window > min(p.shape):
        raise WindowTooLarge(f"window {window} exceeds smallest dim of {p.shape}")
    radius = (window - 1) // 2
    truncate = radius / sigma
    mu_p = _local_stats(p, sigma, truncate)
    mu_r = _local_stats(r, sigma, truncate)
    var_p = _local_stats(p * p, sigma, truncate) - mu_p * mu_p
    var_r = _local_stats(r * r, sigma, truncate) - mu_r * mu_r
    cov = _local_stats(p * r, sigma, truncate) - mu_p * mu_r
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ssim_map = ((2 * mu_p * mu_r + c1) * (2 * cov + c2)) / (
        (mu_p * mu_p + mu_r * mu_r + c1) * (var_p + var_r + c2)
    )
    return float(np.mean(ssim_map[m]))


def evaluate(pred, ref, roi, data_range: float = 1.0, window: int = 7, sigma: float = 1.5) -> MetricReport:
    """All three metrics over one ROI."""
    _, _, m = _checked(pred, ref, roi)
    return MetricReport(
        mse=mse_roi(pred, ref, roi),
        psnr=psnr_roi(pred, ref, roi, data_range),
        ssim=ssim_roi(pred, ref, roi, data_range, window, sigma),
        roi_voxels=int(m.sum()),
    )
