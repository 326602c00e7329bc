from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import EmptyMask

DEFAULT_BIN_WIDTH = 25.0


def bin_levels(values: np.ndarray, bin_width: float = DEFAULT_BIN_WIDTH) -> np.ndarray:
    """Fixed-bin-width gray levels starting at 1 for the lowest occupied bin.

    Bin edges sit on multiples of ``bin_width``: level(x) =
    floor(x / w) - floor(min / w) + 1.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values.astype(np.int64)
    bins = np.floor(values / bin_width)
    return (bins - bins.min() + 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class DiscretizedROI:
    """Gray levels on the bounding box of a mask; 0 marks voxels outside it."""

    levels: np.ndarray
    mask: np.ndarray
    bin_width: float
    offset: Tuple[int, int, int] = (0, 0, 0)

    @property
    def n_levels(self) -> int:
        return int(self.levels.max())

    @property
    def n_voxels(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_levels(cls, levels, mask=None, bin_width: float = 1.0) -> "DiscretizedROI":
        """Build directly from integer levels (>= 1 inside the mask)."""
        lv = np.asarray(levels, dtype=np.int64)
        if lv.ndim == 2:
            lv = lv[None]
        m = lv > 0 if mask is None else np.asarray(mask, dtype=bool).reshape(lv.shape)
        if not m.any():
            raise EmptyMask("ROI is empty")
        if np.any(lv[m] < 1):
            raise ValueError("gray levels inside the mask must be >= 1")
        return cls(np.where(m, lv, 0), m, bin_width)


def bounding_box(mask: np.ndarray):
    idx = np.nonzero(mask)
    if idx[0].size == 0:
        raise EmptyMask("mask is empty")
    return tuple(slice(int(a.min()), int(a.max()) + 1) for a in idx)


def discretize(image: np.ndarray, mask: np.ndarray,
               bin_width: float = DEFAULT_BIN_WIDTH) -> DiscretizedROI:
    mask = np.asarray(mask, dtype=bool)
    box = bounding_box(mask)
    sub_mask = mask[box]
    sub_img = np.asarray(image, dtype=float)[box]
    levels = np.zeros(sub_mask.shape, dtype=np.int64)
    levels[sub_mask] = bin_levels(sub_img[sub_mask], bin_width)
    return DiscretizedROI(levels, sub_mask, bin_width, tuple(s.start for s in box))
