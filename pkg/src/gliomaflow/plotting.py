"""Report figures rendered to PNG files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import DSC_CLASSES, ConfusionMatrix  # noqa: E402


def plot_dsc(dsc: Mapping[str, Mapping[str, float]], path,
             groups: Optional[Mapping[str, str]] = None, title: str = "Dice by class") -> Path:
    """Box plot per class with the individual sessions overlaid.

    With ``groups`` each class gets one box per group side by side.
    """
    path = Path(path)
    classes = [c for c in DSC_CLASSES if any(c in v for v in dsc.values())]
    labels = sorted(set((groups or {}).get(s, "all") for s in dsc)) if groups else ["all"]
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(classes) * len(labels) ** 0.5, 4.0))
    width = 0.8 / len(labels)
    rng = np.random.default_rng(0)  # fixed jitter keeps reruns byte-stable
    for gi, g in enumerate(labels):
        for ci, c in enumerate(classes):
            vals = [v[c] for s, v in dsc.items() if c in v
                    and (groups is None or groups.get(s, "all") == g)]
            if not vals:
                continue
            x = ci + (gi - (len(labels) - 1) / 2) * width
            ax.boxplot([vals], positions=[x], widths=width * 0.8, showfliers=False,
                       medianprops={"color": f"C{gi}"})
            ax.scatter(x + rng.uniform(-width / 5, width / 5, len(vals)), vals, s=10,
                       color=f"C{gi}", alpha=0.7, label=g if ci == 0 and groups else None)
    ax.set_xticks(range(len(classes)))
    ax.set_xticklabels(classes)
    ax.set_ylim(-0.02, 1.02)
    ax.set_ylabel("DSC")
    ax.set_title(title)
    if groups:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_confusion(cm: ConfusionMatrix, path, title: str = "Scan-type confusion matrix") -> Path:
    path = Path(path)
    k = len(cm.labels)
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * k, 1.0 + 0.8 * k))
    counts = cm.counts
    ax.imshow(counts, cmap="Blues")
    vmax = counts.max() if counts.size else 0
    for r in range(k):
        for c in range(k):
            ax.text(c, r, str(counts[r, c]), ha="center", va="center", fontsize=8,
                    color="white" if vmax and counts[r, c] > vmax / 2 else "black")
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    ax.set_xticklabels(cm.labels, rotation=45, ha="right")
    ax.set_yticklabels(cm.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
