"""Texture matrices over a discretized ROI (26-connectivity, distance 1).

Row ``i - 1`` of every matrix corresponds to gray level ``i``; the number of
rows is the highest level present in the ROI.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .discretize import DiscretizedROI

FAMILIES = ("glcm", "glrlm", "glszm", "gldm", "ngtdm")

# one of each opposing pair of the 26 neighbour offsets
OFFSETS_13: List[Tuple[int, int, int]] = [
    d for d in ((a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1))
    if d > (0, 0, 0)
]
# along the last axis; a 2-D ROI of shape (rows, cols) is stored as (1, rows, cols)
HORIZONTAL = (0, 0, 1)
OFFSETS_26: List[Tuple[int, int, int]] = OFFSETS_13 + [tuple(-v for v in d) for d in OFFSETS_13]


def _shift(arr: np.ndarray, d, fill=0) -> np.ndarray:
    """Array whose value at x is arr[x + d]; ``fill`` beyond the edge."""
    padded = np.pad(arr, 1, constant_values=fill)
    n0, n1, n2 = arr.shape
    return padded[1 + d[0]:1 + d[0] + n0, 1 + d[1]:1 + d[1] + n1, 1 + d[2]:1 + d[2] + n2]


def glcm(roi: DiscretizedROI, offsets: Optional[Sequence] = None) -> np.ndarray:
    """Symmetric co-occurrence counts summed over ``offsets`` (default: 13)."""
    lv, ng = roi.levels, roi.n_levels
    out = np.zeros((ng, ng), dtype=np.int64)
    for d in offsets or OFFSETS_13:
        nb = _shift(lv, d)
        ok = roi.mask & (nb > 0)
        np.add.at(out, (lv[ok] - 1, nb[ok] - 1), 1)
    return out + out.T


def glrlm(roi: DiscretizedROI, offsets: Optional[Sequence] = None) -> np.ndarray:
    """Run-length counts summed over ``offsets`` (default: 13 directions)."""
    lv, ng = roi.levels, roi.n_levels
    runs = []
    for d in offsets or OFFSETS_13:
        same_next = roi.mask & (_shift(lv, d) == lv)
        starts = roi.mask & (_shift(lv, tuple(-v for v in d)) != lv)
        remaining = roi.mask.astype(np.int64)
        while True:
            nxt = np.where(same_next, 1 + _shift(remaining, d), remaining)
            if np.array_equal(nxt, remaining):
                break
            remaining = nxt
        runs.append((lv[starts], remaining[starts]))
    width = max(int(r.max()) for _, r in runs)
    out = np.zeros((ng, width), dtype=np.int64)
    for g, r in runs:
        np.add.at(out, (g - 1, r - 1), 1)
    return out


def glszm(roi: DiscretizedROI) -> np.ndarray:
    """Counts of 26-connected same-level zones by size."""
    lv, ng = roi.levels, roi.n_levels
    structure = np.ones((3, 3, 3), dtype=bool)
    zones = []
    for g in range(1, ng + 1):
        labels, n = ndimage.label(lv == g, structure=structure)
        if n:
            zones.append((g, np.bincount(labels.ravel())[1:]))
    width = max(int(s.max()) for _, s in zones)
    out = np.zeros((ng, width), dtype=np.int64)
    for g, sizes in zones:
        np.add.at(out, (np.full(sizes.shape, g - 1), sizes - 1), 1)
    return out


def gldm(roi: DiscretizedROI) -> np.ndarray:
    """Dependence counts: 1 + neighbours sharing the centre's level (alpha 0)."""
    lv, ng = roi.levels, roi.n_levels
    dep = np.ones(lv.shape, dtype=np.int64)
    for d in OFFSETS_26:
        dep += _shift(lv, d) == lv
    out = np.zeros((ng, 27), dtype=np.int64)
    np.add.at(out, (lv[roi.mask] - 1, dep[roi.mask] - 1), 1)
    return out


def ngtdm(roi: DiscretizedROI) -> np.ndarray:
    """Columns ``[n_i, s_i]`` per level; voxels without ROI neighbours are skipped."""
    lv, ng = roi.levels, roi.n_levels
    total = np.zeros(lv.shape, dtype=float)
    count = np.zeros(lv.shape, dtype=np.int64)
    for d in OFFSETS_26:
        nb = _shift(lv, d)
        total += nb
        count += nb > 0
    ok = roi.mask & (count > 0)
    avg = total[ok] / count[ok]
    g = lv[ok]
    out = np.zeros((ng, 2), dtype=float)
    np.add.at(out[:, 0], g - 1, 1.0)
    np.add.at(out[:, 1], g - 1, np.abs(g - avg))
    return out


_BUILDERS = {"glcm": glcm, "glrlm": glrlm, "glszm": glszm, "gldm": gldm, "ngtdm": ngtdm}


def texture_matrix(roi: DiscretizedROI, family: str, offsets: Optional[Sequence] = None) -> np.ndarray:
    """Matrix for ``family``; ``offsets`` restricts GLCM/GLRLM directions."""
    family = family.lower()
    if family not in _BUILDERS:
        raise ValueError(f"unknown texture family {family!r}")
    if family in ("glcm", "glrlm"):
        return _BUILDERS[family](roi, offsets)
    return _BUILDERS[family](roi)
