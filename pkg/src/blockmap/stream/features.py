from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import DataError
from .schema import FrameRecord

_LAPLACIAN_3x3 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def fallback_feature_score(image: np.ndarray) -> float:
    """Sharpness proxy: variance of the 3x3 Laplacian response.

    Accepts a grey image, an RGB(A) image (channels averaged) or a depth map
    (non-finite pixels filled with the mean of the finite ones).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        img = img[..., :3].mean(axis=2)
    if img.ndim != 2 or img.size == 0:
        raise DataError(f"feature score needs a non-empty 2-D image, got shape {img.shape}")
    finite = np.isfinite(img)
    if not finite.all():
        fill = float(img[finite].mean()) if finite.any() else 0.0
        img = np.where(finite, img, fill)
    resp = ndimage.convolve(img, _LAPLACIAN_3x3, mode="reflect")
    return float(max(resp.var(), 0.0))


def frame_score(frame: FrameRecord) -> float:
    """Manifest score when present, else the fallback on the sensor depth, else 0."""
    if frame.feature_score is not None:
        return float(frame.feature_score)
    if frame.sensor_depth is not None:
        return fallback_feature_score(frame.sensor_depth.values)
    return 0.0
