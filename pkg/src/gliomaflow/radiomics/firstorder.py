from __future__ import annotations

from typing import Dict

import numpy as np

from ..errors import EmptyMask
from .discretize import DEFAULT_BIN_WIDTH, bin_levels

FIRST_ORDER_FEATURES = (
    "Energy", "Entropy", "Minimum", "10Percentile", "90Percentile", "Maximum", "Mean",
    "Median", "InterquartileRange", "Range", "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation", "RootMeanSquared", "StandardDeviation", "Skewness",
    "Kurtosis", "Variance", "Uniformity",
)


def first_order_features(image, mask, bin_width: float = DEFAULT_BIN_WIDTH) -> Dict[str, float]:
    """Intensity statistics over the masked voxels.

    Entropy and uniformity use the fixed-bin-width histogram; everything else
    uses raw intensities.  Standard deviation and variance are population
    moments; skewness and kurtosis (non-excess) are 0 for a flat region.
    """
    x = np.asarray(image, dtype=float)[np.asarray(mask, dtype=bool)]
    if x.size == 0:
        raise EmptyMask("first-order features need a non-empty mask")
    n = x.size
    # a flat region has exactly zero spread, whatever the float rounding of the mean
    mean = x[0] if x.min() == x.max() else x.mean()
    dev = x - mean
    m2 = float((dev ** 2).mean())
    m3 = float((dev ** 3).mean())
    m4 = float((dev ** 4).mean())
    p10, p25, p50, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    robust = x[(x >= p10) & (x <= p90)]
    # with two distinct values nothing lies inside the 10-90 band
    rmad = float(np.abs(robust - robust.mean()).mean()) if robust.size else 0.0

    _, counts = np.unique(bin_levels(x, bin_width), return_counts=True)
    prob = counts / n

    return {
        "Energy": float((x ** 2).sum()),
        "Entropy": float(-(prob * np.log2(prob)).sum()) + 0.0,
        "Minimum": float(x.min()),
        "10Percentile": float(p10),
        "90Percentile": float(p90),
        "Maximum": float(x.max()),
        "Mean": float(mean),
        "Median": float(p50),
        "InterquartileRange": float(p75 - p25),
        "Range": float(x.max() - x.min()),
        "MeanAbsoluteDeviation": float(np.abs(dev).mean()),
        "RobustMeanAbsoluteDeviation": rmad,
        "RootMeanSquared": float(np.sqrt((x ** 2).mean())),
        "StandardDeviation": float(np.sqrt(m2)),
        "Skewness": m3 / m2 ** 1.5 if m2 > 0 else 0.0,
        "Kurtosis": m4 / m2 ** 2 if m2 > 0 else 0.0,
        "Variance": m2,
        "Uniformity": float((prob ** 2).sum()),
    }
