"""Texture features from the matrices in :mod:`matrices`.

Entropies use log2 over non-zero probabilities only.  Conventions for
undefined values are listed in docs/formulas.md.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from ..errors import DegenerateMatrix

GLCM_FEATURES = (
    "Autocorrelation", "JointAverage", "ClusterProminence", "ClusterShade",
    "ClusterTendency", "Contrast", "Correlation", "DifferenceAverage",
    "DifferenceEntropy", "DifferenceVariance", "JointEnergy", "JointEntropy", "Imc1",
    "Imc2", "Idm", "MCC", "Idmn", "Id", "Idn", "InverseVariance", "MaximumProbability",
    "SumAverage", "SumEntropy", "SumSquares",
)
GLRLM_FEATURES = (
    "ShortRunEmphasis", "LongRunEmphasis", "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized", "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized", "RunPercentage", "GrayLevelVariance",
    "RunVariance", "RunEntropy", "LowGrayLevelRunEmphasis", "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis", "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis", "LongRunHighGrayLevelEmphasis",
)
GLSZM_FEATURES = (
    "SmallAreaEmphasis", "LargeAreaEmphasis", "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized", "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized", "ZonePercentage", "GrayLevelVariance",
    "ZoneVariance", "ZoneEntropy", "LowGrayLevelZoneEmphasis", "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis", "SmallAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis", "LargeAreaHighGrayLevelEmphasis",
)
GLDM_FEATURES = (
    "SmallDependenceEmphasis", "LargeDependenceEmphasis", "GrayLevelNonUniformity",
    "DependenceNonUniformity", "DependenceNonUniformityNormalized", "GrayLevelVariance",
    "DependenceVariance", "DependenceEntropy", "LowGrayLevelEmphasis",
    "HighGrayLevelEmphasis", "SmallDependenceLowGrayLevelEmphasis",
    "SmallDependenceHighGrayLevelEmphasis", "LargeDependenceLowGrayLevelEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
)
NGTDM_FEATURES = ("Coarseness", "Contrast", "Busyness", "Complexity", "Strength")

TEXTURE_FEATURES = {
    "glcm": GLCM_FEATURES,
    "glrlm": GLRLM_FEATURES,
    "glszm": GLSZM_FEATURES,
    "gldm": GLDM_FEATURES,
    "ngtdm": NGTDM_FEATURES,
}

# below this, a standard deviation counts as zero
ZERO_TOL = 1e-12
COARSENESS_CAP = 1e6


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0  # no negative zero


def _probabilities(matrix: np.ndarray, family: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    total = m.sum()
    if total <= 0:
        raise DegenerateMatrix(f"{family} matrix is all zero")
    return m / total


def glcm_features(matrix) -> Dict[str, float]:
    p = _probabilities(matrix, "glcm")
    ng = p.shape[0]
    lv = np.arange(1, ng + 1, dtype=float)
    i, j = lv[:, None], lv[None, :]
    px, py = p.sum(1), p.sum(0)
    ux, uy = float(px @ lv), float(py @ lv)
    sx = float(np.sqrt(px @ (lv - ux) ** 2))
    sy = float(np.sqrt(py @ (lv - uy) ** 2))

    k_sum = np.arange(2, 2 * ng + 1, dtype=float)
    p_sum = np.bincount((i + j - 2).astype(int).ravel(), p.ravel(), minlength=2 * ng - 1)
    k_diff = np.arange(ng, dtype=float)
    p_diff = np.bincount(np.abs(i - j).astype(int).ravel(), p.ravel(), minlength=ng)

    hx, hy, hxy = _entropy(px), _entropy(py), _entropy(p)
    pxy = px[:, None] * py[None, :]
    nz = p > 0
    hxy1 = float(-(p[nz] * np.log2(pxy[nz])).sum())
    nzp = pxy > 0
    hxy2 = float(-(pxy[nzp] * np.log2(pxy[nzp])).sum())

    if sx * sy < ZERO_TOL:
        correlation = 1.0
    else:
        correlation = float((p * (i - ux) * (j - uy)).sum() / (sx * sy))
    hmax = max(hx, hy)
    imc1 = (hxy - hxy1) / hmax if hmax > 0 else 0.0
    imc2 = float(np.sqrt(1.0 - np.exp(-2.0 * (hxy2 - hxy)))) if hxy2 > hxy else 0.0

    present = (px > 0)
    if present.sum() < 2:
        mcc = 1.0
    else:
        q_p = p[np.ix_(present, present)]
        q_px = px[present]
        q_py = py[present]
        q = (q_p / q_px[:, None]) @ (q_p / q_py[None, :]).T
        eig = np.sort(np.linalg.eigvals(q).real)[::-1]
        mcc = float(np.sqrt(max(eig[1], 0.0)))

    diff2 = (i - j) ** 2
    off = i != j
    mu_diff = float(p_diff @ k_diff)
    return {
        "Autocorrelation": float((p * i * j).sum()),
        "JointAverage": ux,
        "ClusterProminence": float((p * (i + j - ux - uy) ** 4).sum()),
        "ClusterShade": float((p * (i + j - ux - uy) ** 3).sum()),
        "ClusterTendency": float((p * (i + j - ux - uy) ** 2).sum()),
        "Contrast": float((p * diff2).sum()),
        "Correlation": correlation,
        "DifferenceAverage": mu_diff,
        "DifferenceEntropy": _entropy(p_diff),
        "DifferenceVariance": float(p_diff @ (k_diff - mu_diff) ** 2),
        "JointEnergy": float((p ** 2).sum()),
        "JointEntropy": hxy,
        "Imc1": float(imc1),
        "Imc2": imc2,
        "Idm": float((p / (1.0 + diff2)).sum()),
        "MCC": mcc,
        "Idmn": float((p / (1.0 + diff2 / ng ** 2)).sum()),
        "Id": float((p / (1.0 + np.abs(i - j))).sum()),
        "Idn": float((p / (1.0 + np.abs(i - j) / ng)).sum()),
        "InverseVariance": float((p[off] / diff2[off]).sum()),
        "MaximumProbability": float(p.max()),
        "SumAverage": float(p_sum @ k_sum),
        "SumEntropy": _entropy(p_sum),
        "SumSquares": float((p * (i - ux) ** 2).sum()),
    }


def _size_matrix_features(matrix, family: str) -> Dict[str, float]:
    """Shared body of the run-length, size-zone and dependence families.

    Columns index run length / zone size / dependence starting at 1.  The
    voxel count is recovered as sum_j j * P(., j), which for run lengths is
    voxels times directions.
    """
    counts = np.asarray(matrix, dtype=float)
    p = _probabilities(counts, family)
    n_items = counts.sum()
    ng, nj = p.shape
    i = np.arange(1, ng + 1, dtype=float)[:, None]
    j = np.arange(1, nj + 1, dtype=float)[None, :]
    pg, pj = p.sum(1), p.sum(0)
    ui = float((p * i).sum())
    uj = float((p * j).sum())
    n_voxels = float((counts * j).sum())
    return {
        "se": float((p / j ** 2).sum()),
        "le": float((p * j ** 2).sum()),
        "gln": float((counts.sum(1) ** 2).sum() / n_items),
        "glnn": float((pg ** 2).sum()),
        "sn": float((counts.sum(0) ** 2).sum() / n_items),
        "snn": float((pj ** 2).sum()),
        "pct": float(n_items / n_voxels),
        "glv": float((p * (i - ui) ** 2).sum()),
        "sv": float((p * (j - uj) ** 2).sum()),
        "ent": _entropy(p),
        "lgle": float((p / i ** 2).sum()),
        "hgle": float((p * i ** 2).sum()),
        "slgle": float((p / (i ** 2 * j ** 2)).sum()),
        "shgle": float((p * i ** 2 / j ** 2).sum()),
        "llgle": float((p * j ** 2 / i ** 2).sum()),
        "lhgle": float((p * i ** 2 * j ** 2).sum()),
    }


_GLRLM_KEYS = ("se", "le", "gln", "glnn", "sn", "snn", "pct", "glv", "sv", "ent",
               "lgle", "hgle", "slgle", "shgle", "llgle", "lhgle")
_GLDM_KEYS = ("se", "le", "gln", "sn", "snn", "glv", "sv", "ent",
              "lgle", "hgle", "slgle", "shgle", "llgle", "lhgle")


def glrlm_features(matrix) -> Dict[str, float]:
    v = _size_matrix_features(matrix, "glrlm")
    return dict(zip(GLRLM_FEATURES, (v[k] for k in _GLRLM_KEYS)))


def glszm_features(matrix) -> Dict[str, float]:
    v = _size_matrix_features(matrix, "glszm")
    return dict(zip(GLSZM_FEATURES, (v[k] for k in _GLRLM_KEYS)))


def gldm_features(matrix) -> Dict[str, float]:
    v = _size_matrix_features(matrix, "gldm")
    return dict(zip(GLDM_FEATURES, (v[k] for k in _GLDM_KEYS)))


def ngtdm_features(matrix) -> Dict[str, float]:
    m = np.asarray(matrix, dtype=float)
    n, s = m[:, 0], m[:, 1]
    nvp = n.sum()
    if nvp <= 0:
        raise DegenerateMatrix("ngtdm matrix is all zero")
    p = n / nvp
    lv = np.arange(1, len(n) + 1, dtype=float)
    occ = p > 0
    pi, li, si = p[occ], lv[occ], s[occ]
    ngp = int(occ.sum())
    ps = float(pi @ si)
    s_total = float(si.sum())

    pp = pi[:, None] * pi[None, :]
    d = li[:, None] - li[None, :]
    coarseness = 1.0 / ps if ps > 0 else COARSENESS_CAP
    contrast = (float((pp * d ** 2).sum()) / (ngp * (ngp - 1)) * s_total / nvp) if ngp > 1 else 0.0
    ip = li * pi
    busy_den = float(np.abs(ip[:, None] - ip[None, :]).sum())
    busyness = ps / busy_den if ngp > 1 and busy_den > 0 else 0.0
    ps_i = pi * si
    complexity = float((np.abs(d) * (ps_i[:, None] + ps_i[None, :]) / (pi[:, None] + pi[None, :])).sum() / nvp)
    strength = float(((pi[:, None] + pi[None, :]) * d ** 2).sum() / s_total) if s_total > 0 else 0.0
    return {
        "Coarseness": float(coarseness),
        "Contrast": float(contrast),
        "Busyness": float(busyness),
        "Complexity": complexity,
        "Strength": strength,
    }


_FEATURE_FUNCS = {
    "glcm": glcm_features,
    "glrlm": glrlm_features,
    "glszm": glszm_features,
    "gldm": gldm_features,
    "ngtdm": ngtdm_features,
}


def texture_features(matrix, family: str) -> Dict[str, float]:
    family = family.lower()
    if family not in _FEATURE_FUNCS:
        raise ValueError(f"unknown texture family {family!r}")
    return _FEATURE_FUNCS[family](matrix)
