from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import ConfigError
from ..geometry import grid_pixels
from ..stream.schema import BACKGROUND, InstanceMask


def erode_mask(mask: InstanceMask, radius: int) -> Optional[InstanceMask]:
    """Square-element erosion; ``None`` when nothing survives."""
    r = int(radius)
    if r < 0:
        raise ConfigError(f"erosion radius must be >= 0, got {radius}")
    if r == 0:
        return mask
    m = ndimage.binary_erosion(mask.mask, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool), border_value=0)
    if not m.any():
        return None
    return InstanceMask(class_label=mask.class_label, mask=m, confidence=mask.confidence)


def erode_all(masks: Sequence[InstanceMask], radius: int) -> List[Tuple[int, InstanceMask]]:
    """Eroded masks paired with their index in the input; empty results are dropped."""
    out: List[Tuple[int, InstanceMask]] = []
    for i, m in enumerate(masks):
        e = erode_mask(m, radius)
        if e is not None:
            out.append((i, e))
    return out


def label_image(masks: Sequence[InstanceMask], width: int, height: int) -> np.ndarray:
    """Per-pixel index of the covering mask, highest confidence first (ties to the lower index)."""
    labels = np.full((height, width), BACKGROUND, dtype=np.int64)
    best = np.full((height, width), -np.inf)
    for i, m in enumerate(masks):
        better = m.mask & (m.confidence > best)
        labels[better] = i
        best[better] = m.confidence
    return labels


def sample_grid(
    masks: Sequence[InstanceMask],
    stride: int,
    width: int,
    height: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid pixels at multiples of ``stride`` with the covering mask index or BACKGROUND.

    Returns ``(us, vs, labels)`` in row-major order.
    """
    us, vs = grid_pixels(width, height, stride)
    return us, vs, label_image(masks, width, height)[vs, us]
