"""Image quality metrics for RGB images in [0, 1]."""
import numpy as np
from skimage.metrics import structural_similarity

from shared.types import SceneValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_MIN_SIDE = 3


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SceneValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[-1] != 3:
        raise SceneValidationError(f"expected (H, W, 3) images, got {a.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; inf for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * float(np.log10(mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity, 11-pixel gaussian window (sigma 1.5), averaged over channels.

    Images narrower than the window use the largest odd window that fits, with
    sigma scaled down alongside it.
    """
    a, b = _check_pair(a, b)
    side = min(a.shape[:2])
    if side < SSIM_MIN_SIDE:
        raise SceneValidationError(f"ssim needs images at least {SSIM_MIN_SIDE} pixels per side")
    window = min(SSIM_WINDOW, side if side % 2 else side - 1)
    sigma = SSIM_SIGMA * (window - 1) / (SSIM_WINDOW - 1)
    return float(structural_similarity(a, b, win_size=window, gaussian_weights=True, sigma=sigma,
                                       use_sample_covariance=False, data_range=1.0, channel_axis=-1))
