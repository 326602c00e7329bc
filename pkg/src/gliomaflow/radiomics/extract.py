"""Fixed-width feature vector for one session.

Column names follow ``class_image_family_feature``; shape columns use the
image token ``mask`` because shape does not depend on image contrast.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from ..errors import DegenerateMatrix, GridMismatch
from ..volume import TUMOR_CLASSES, Volume3D, class_masks
from .discretize import DEFAULT_BIN_WIDTH, discretize
from .firstorder import FIRST_ORDER_FEATURES, first_order_features
from .matrices import FAMILIES, texture_matrix
from .shape import SHAPE_FEATURES, shape_features
from .texture import TEXTURE_FEATURES, texture_features

log = logging.getLogger(__name__)

IMAGE_ORDER = ("T1WI", "GdT1WI", "T2WI", "FLAIR")
SHAPE_TOKEN = "mask"


def _family_names(family: str) -> Sequence[str]:
    return FIRST_ORDER_FEATURES if family == "firstorder" else TEXTURE_FEATURES[family]


def feature_names() -> List[str]:
    names = [f"{c}_{SHAPE_TOKEN}_shape_{f}" for c in TUMOR_CLASSES for f in SHAPE_FEATURES]
    for c in TUMOR_CLASSES:
        for img in IMAGE_ORDER:
            for fam in ("firstorder",) + FAMILIES:
                names.extend(f"{c}_{img}_{fam}_{f}" for f in _family_names(fam))
    return names


@dataclass
class FeatureVector:
    session_id: str
    names: List[str]
    values: List[Optional[float]]
    warnings: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def n_null(self) -> int:
        return sum(v is None for v in self.values)

    def as_mapping(self) -> Dict[str, Optional[float]]:
        return dict(zip(self.names, self.values))

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "features": self.as_mapping(),
                "warnings": list(self.warnings)}


def _key(k) -> str:
    return str(getattr(k, "value", k))


def _image_block(image: np.ndarray, region: np.ndarray, bin_width: float,
                 prefix: str, warnings: List[str]) -> Dict[str, Optional[float]]:
    out: Dict[str, Optional[float]] = {}
    for name, v in first_order_features(image, region, bin_width).items():
        out[f"{prefix}_firstorder_{name}"] = v
    roi = discretize(image, region, bin_width)
    for fam in FAMILIES:
        try:
            feats = texture_features(texture_matrix(roi, fam), fam)
        except DegenerateMatrix as exc:
            warnings.append(f"{prefix}_{fam}: {exc}")
            feats = {}
        for name in TEXTURE_FEATURES[fam]:
            out[f"{prefix}_{fam}_{name}"] = feats.get(name)
    return out


def extract_all(images: Mapping, mask: Volume3D, session_id: str = "",
                bin_width: float = DEFAULT_BIN_WIDTH, binary_wt: bool = False) -> FeatureVector:
    """Shape per class, then first-order and texture per (class, image).

    Missing images, missing or empty classes, and all-zero texture matrices
    yield ``None`` entries so the vector always has the same columns.
    """
    imgs = {_key(k): v for k, v in images.items()}
    for name, vol in imgs.items():
        if tuple(vol.dims) != tuple(mask.dims):
            raise GridMismatch(f"image {name} grid {vol.dims} differs from mask {mask.dims}")
    regions = class_masks(mask.voxels, binary_wt=binary_wt)
    names = feature_names()
    values: Dict[str, Optional[float]] = {}
    warnings: List[str] = []
    for cls in TUMOR_CLASSES:
        region = regions.get(cls)
        if region is None or not region.any():
            continue
        for feat, v in shape_features(region, mask.spacing).items():
            values[f"{cls}_{SHAPE_TOKEN}_shape_{feat}"] = v
        for img in IMAGE_ORDER:
            if img in imgs:
                data = np.asarray(imgs[img].voxels, dtype=float)
                values.update(_image_block(data, region, bin_width, f"{cls}_{img}", warnings))
    for w in warnings:
        log.warning("degenerate texture matrix", extra={"session": session_id, "detail": w})
    return FeatureVector(session_id, names, [values.get(n) for n in names], warnings)


def write_features_json(vectors: Iterable[FeatureVector], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([v.to_dict() for v in vectors], indent=1))
    return path


def write_features_csv(docs: Iterable[dict], path) -> Path:
    """One row per session (dicts as produced by ``FeatureVector.to_dict``)."""
    path = Path(path)
    names = feature_names()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["session_id", *names])
        for doc in sorted(docs, key=lambda d: d["session_id"]):
            values = doc["features"]
            writer.writerow([doc["session_id"], *[
                "" if values.get(n) is None else repr(float(values[n])) for n in names]])
    return path
