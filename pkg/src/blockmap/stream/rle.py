"""Run-length coding of binary masks.

Row-major runs alternating 0s and 1s, always starting with a (possibly empty)
run of 0s. Serialised as space-separated decimal integers.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from ..errors import DataError


def encode_rle(mask: np.ndarray) -> List[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def decode_rle(counts: Sequence[int], width: int, height: int) -> np.ndarray:
    c = np.asarray(list(counts), dtype=np.int64)
    if c.size == 0 or np.any(c < 0):
        raise DataError("RLE counts must be a non-empty list of non-negative integers")
    total = int(c.sum())
    if total != width * height:
        raise DataError(f"RLE decodes to {total} pixels, expected {width}x{height}={width * height}")
    values = (np.arange(c.size) % 2).astype(bool)
    return np.repeat(values, c).reshape(height, width)


def rle_to_text(counts: Sequence[int]) -> str:
    return " ".join(str(int(x)) for x in counts)


def rle_from_text(text: str) -> List[int]:
    try:
        return [int(tok) for tok in str(text).split()]
    except ValueError as e:
        raise DataError(f"RLE must be decimal integers: {e}") from None
