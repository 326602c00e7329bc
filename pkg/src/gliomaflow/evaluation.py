"""Segmentation and classification metrics plus Welch's t-test."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateSample, EmptyMatrix, GridMismatch
from .volume import Volume3D, class_masks

DSC_CLASSES = ("WT", "TC", "ET")
BETACF_TOL = 1e-12
BETACF_MAX_ITER = 10000


# ---------------------------------------------------------------- Dice

def _as_bool(x) -> np.ndarray:
    if isinstance(x, Volume3D):
        return np.asarray(x.voxels) != 0
    return np.asarray(x).astype(bool)


def dice(a, b) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks score 1.0."""
    if isinstance(a, Volume3D) and isinstance(b, Volume3D) and not a.geometry.same_grid(b.geometry):
        raise GridMismatch("masks are on different grids")
    a, b = _as_bool(a), _as_bool(b)
    if a.shape != b.shape:
        raise GridMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def segmentation_dice(pred, truth, binary_wt: bool = False) -> Dict[str, float]:
    """DSC for WT, TC and ET (only WT when the prediction is a binary mask)."""
    p = pred.voxels if isinstance(pred, Volume3D) else np.asarray(pred)
    t = truth.voxels if isinstance(truth, Volume3D) else np.asarray(truth)
    if p.shape != t.shape:
        raise GridMismatch(f"mask shapes differ: {p.shape} vs {t.shape}")
    pm = class_masks(p, binary_wt=binary_wt)
    tm = class_masks(t)
    return {c: dice(pm[c], tm[c]) for c in DSC_CLASSES if pm[c] is not None}


# ---------------------------------------------------------------- classification

@dataclass
class ConfusionMatrix:
    """Counts with rows = truth and columns = prediction."""

    labels: List[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_pairs(cls, truth: Sequence[str], predicted: Sequence[str],
                   labels: Optional[Sequence[str]] = None) -> "ConfusionMatrix":
        if len(truth) != len(predicted):
            raise ValueError("truth and predicted lengths differ")
        labels = list(labels) if labels else sorted(set(truth) | set(predicted))
        index = {lab: n for n, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(truth, predicted):
            counts[index[t], index[p]] += 1
        return cls(labels, counts)

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    undefined: List[str] = field(default_factory=list)


@dataclass
class ClassificationReport:
    accuracy: float
    per_class: Dict[str, ClassMetrics]
    total: int

    @property
    def flags(self) -> List[str]:
        return [f"{lab}.{m}" for lab, cm in self.per_class.items() for m in cm.undefined]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
            "undefined_as_zero": self.flags,
        }


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    """Accuracy and per-class precision/recall/F1; 0/0 ratios are 0 and flagged."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no entries")
    c = cm.counts
    diag = np.diag(c)
    per_class = {}
    for k, lab in enumerate(cm.labels):
        undefined = []
        col, row = int(c[:, k].sum()), int(c[k, :].sum())
        precision = diag[k] / col if col else 0.0
        recall = diag[k] / row if row else 0.0
        if not col:
            undefined.append("precision")
        if not row:
            undefined.append("recall")
        if precision + recall:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            undefined.append("f1")
        per_class[lab] = ClassMetrics(float(precision), float(recall), float(f1), row, undefined)
    return ClassificationReport(float(diag.sum() / cm.total), per_class, cm.total)


# ---------------------------------------------------------------- Student t

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETACF_TOL:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, incomplete_beta(df / 2.0, 0.5, df / (df + t * t)))


@dataclass
class TTestResult:
    t: float
    df: float
    p_two_sided: float
    significant: bool
    alpha: float = 0.05
    n_x: int = 0
    n_y: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self), sided="two-sided")


def welch_t(x: Sequence[float], y: Sequence[float], alpha: float = 0.05) -> TTestResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise DegenerateSample("each sample needs at least two values")
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    if vx == 0 or vy == 0:
        raise DegenerateSample("samples must have non-zero variance")
    sx, sy = vx / x.size, vy / y.size
    t = float((x.mean() - y.mean()) / math.sqrt(sx + sy))
    df = float((sx + sy) ** 2 / (sx ** 2 / (x.size - 1) + sy ** 2 / (y.size - 1)))
    p = two_sided_p(t, df)
    return TTestResult(t, df, p, p < alpha, alpha, int(x.size), int(y.size))


# ---------------------------------------------------------------- aggregates and reports

def mean_sd(values: Iterable[float]):
    """Mean and sample standard deviation (sd 0 for a single value)."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def format_mean_sd(values: Iterable[float], digits: int = 3) -> str:
    m, s = mean_sd(values)
    return f"{m:.{digits}f} (±{s:.{digits}f})"


def evaluation_report(dsc: Mapping[str, Mapping[str, float]],
                      groups: Optional[Mapping[str, str]] = None,
                      confusion: Optional[ConfusionMatrix] = None,
                      alpha: float = 0.05) -> dict:
    """Per-session DSC, aggregates, optional group t-tests and classification metrics.

    ``dsc`` maps session id to {class: DSC}; ``groups`` maps session id to a
    label (for example tumour grade).  With exactly two groups, each class
    gets a Welch test; degenerate samples are reported, not raised.
    """
    classes = [c for c in DSC_CLASSES if any(c in v for v in dsc.values())]
    agg = {}
    for c in classes:
        vals = [v[c] for v in dsc.values() if c in v]
        m, s = mean_sd(vals)
        agg[c] = {"n": len(vals), "mean": m, "sd": s, "formatted": format_mean_sd(vals)}
    report = {"per_session": {k: dict(v) for k, v in sorted(dsc.items())}, "aggregate": agg}

    if groups:
        labels = sorted({g for sid, g in groups.items() if sid in dsc})
        by_group = {}
        for g in labels:
            by_group[g] = {}
            for c in classes:
                vals = [dsc[s][c] for s, gg in groups.items() if gg == g and s in dsc and c in dsc[s]]
                by_group[g][c] = {"n": len(vals), "formatted": format_mean_sd(vals) if vals else None}
        report["by_group"] = by_group
        if len(labels) == 2:
            tests = {}
            a, b = labels
            for c in classes:
                xa = [dsc[s][c] for s, g in groups.items() if g == a and s in dsc and c in dsc[s]]
                xb = [dsc[s][c] for s, g in groups.items() if g == b and s in dsc and c in dsc[s]]
                try:
                    tests[c] = dict(welch_t(xa, xb, alpha).to_dict(), groups=[a, b])
                except DegenerateSample as exc:
                    tests[c] = {"error": str(exc), "groups": [a, b]}
            report["tests"] = tests

    if confusion is not None:
        report["confusion_matrix"] = confusion.to_dict()
        report["classification"] = classification_report(confusion).to_dict()
    return report


def write_dsc_csv(dsc: Mapping[str, Mapping[str, float]], path,
                  groups: Optional[Mapping[str, str]] = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_id", "group", *DSC_CLASSES])
        for sid in sorted(dsc):
            w.writerow([sid, (groups or {}).get(sid, ""),
                        *["" if c not in dsc[sid] else f"{dsc[sid][c]:.6f}" for c in DSC_CLASSES]])
    return path


def write_report_json(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=1, ensure_ascii=False))
    return path
