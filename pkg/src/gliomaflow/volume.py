"""Volume and transform math.

Volumes carry an index-to-world mapping built from ``origin``, ``spacing`` and a
3x3 ``direction`` matrix whose columns are the world directions of the three
array axes.  World coordinates are millimetres in RAS (the NIfTI convention);
DICOM LPS geometry is converted on ingest.

Transforms (``Affine4``) are plain 4x4 float arrays mapping world coordinates of
one space into world coordinates of another.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .errors import (
    DegenerateIntensities,
    InvalidLabel,
    ModeLabelMismatch,
    SingularTransform,
    VolumeError,
)

BG, NC, ED, ET = 0, 1, 2, 4
VALID_LABELS = (BG, NC, ED, ET)

Affine4 = np.ndarray

_DET_EPS = 1e-12


@dataclass(frozen=True)
class Geometry:
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise VolumeError(f"dims must be 3 positive ints, got {self.dims}")
        if len(self.spacing) != 3 or any(float(s) <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        direction = np.asarray(self.direction, dtype=float).reshape(3, 3)
        object.__setattr__(self, "direction", direction)

    @property
    def affine(self) -> np.ndarray:
        """Index (i, j, k) to world (mm) as a 4x4 matrix."""
        out = np.eye(4)
        out[:3, :3] = self.direction * np.asarray(self.spacing)[None, :]
        out[:3, 3] = self.origin
        return out

    @classmethod
    def from_affine(cls, dims, affine) -> "Geometry":
        affine = np.asarray(affine, dtype=float)
        lin = affine[:3, :3]
        spacing = np.linalg.norm(lin, axis=0)
        if np.any(spacing <= 0):
            raise VolumeError("affine has a zero-length axis")
        return cls(tuple(dims), tuple(spacing), tuple(affine[:3, 3]), lin / spacing[None, :])

    def same_grid(self, other: "Geometry", atol: float = 1e-4) -> bool:
        return self.dims == other.dims and np.allclose(self.affine, other.affine, atol=atol)


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Voxel grid plus geometry.

    ``voxels`` is indexed ``[i, j, k]`` along the three geometry axes.  Treat
    instances as immutable: every operation here allocates its output.
    """

    voxels: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    is_label: bool = False
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3:
            raise VolumeError(f"voxels must be 3-D, got shape {vox.shape}")
        object.__setattr__(self, "voxels", vox)
        geom = Geometry(vox.shape, self.spacing, self.origin, self.direction)
        object.__setattr__(self, "spacing", geom.spacing)
        object.__setattr__(self, "origin", geom.origin)
        object.__setattr__(self, "direction", geom.direction)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.voxels.shape)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.dims, self.spacing, self.origin, self.direction)

    @property
    def affine(self) -> np.ndarray:
        return self.geometry.affine

    def with_voxels(self, voxels, *, is_label: bool | None = None, **meta) -> "Volume3D":
        new_meta = dict(self.meta)
        new_meta.update(meta)
        return replace(
            self,
            voxels=np.asarray(voxels),
            is_label=self.is_label if is_label is None else is_label,
            meta=new_meta,
        )

    @classmethod
    def on_geometry(cls, voxels, geom: Geometry, *, is_label=False, meta=None) -> "Volume3D":
        return cls(np.asarray(voxels), geom.spacing, geom.origin, geom.direction,
                   is_label=is_label, meta=dict(meta or {}))


def seg_mask(voxels, geom: Geometry | None = None, **kw) -> Volume3D:
    """Wrap a label array as a label volume, checking the label vocabulary."""
    vox = np.asarray(voxels)
    check_labels(vox)
    vox = vox.astype(np.uint8)
    if geom is None:
        return Volume3D(vox, is_label=True, **kw)
    return Volume3D.on_geometry(vox, geom, is_label=True, meta=kw.get("meta"))


def check_labels(voxels, allowed=VALID_LABELS) -> None:
    present = np.unique(np.asarray(voxels))
    bad = [int(v) for v in present if v not in allowed]
    if bad:
        raise InvalidLabel(f"labels {bad} outside {sorted(allowed)}")


# -- intensity normalisation ------------------------------------------------

def inlier_values(values: np.ndarray) -> np.ndarray:
    """In-mask values strictly between the 5th and 95th percentiles.

    Percentiles use linear interpolation between order statistics.
    """
    values = np.asarray(values, dtype=float).ravel()
    p5, p95 = np.percentile(values, [5.0, 95.0])
    return values[(values > p5) & (values < p95)]


def normalize_intensity(vol: Volume3D, brain_mask) -> Volume3D:
    mask = np.asarray(brain_mask.voxels if isinstance(brain_mask, Volume3D) else brain_mask)
    mask = mask.astype(bool)
    if mask.shape != vol.dims:
        raise VolumeError(f"mask shape {mask.shape} != volume dims {vol.dims}")
    if not mask.any():
        raise DegenerateIntensities("brain mask is empty")
    values = vol.voxels[mask].astype(float)
    if np.unique(values).size < 2:
        raise DegenerateIntensities("fewer than two distinct in-mask intensities")
    inl = inlier_values(values)
    if inl.size < 2:
        raise DegenerateIntensities("no intensities strictly inside the 5-95 percentile band")
    mean = inl.mean()
    std = inl.std()
    if not std > 0:
        raise DegenerateIntensities("inlier intensities have zero variance")
    out = np.zeros(vol.dims, dtype=float)
    out[mask] = (values - mean) / std
    return vol.with_voxels(out, is_label=False, norm_mean=float(mean), norm_std=float(std))


# -- sampling ---------------------------------------------------------------

def _snap(coords: np.ndarray) -> np.ndarray:
    rounded = np.round(coords)
    return np.where(np.abs(coords - rounded) < 1e-9, rounded, coords)


def _sample(data: np.ndarray, coords: np.ndarray, mode: str, outside: str) -> np.ndarray:
    """Sample ``data`` at continuous index ``coords`` (shape (3, N)).

    ``outside='zero'`` returns 0 for points off the grid, ``'clamp'`` clamps
    to the edge voxel.
    """
    coords = _snap(coords)
    dims = np.asarray(data.shape)[:, None]
    if mode == "nearest":
        idx = np.floor(coords + 0.5).astype(np.int64)
        if outside == "clamp":
            idx = np.clip(idx, 0, dims - 1)
            return data[idx[0], idx[1], idx[2]]
        valid = np.all((idx >= 0) & (idx <= dims - 1), axis=0)
        out = np.zeros(coords.shape[1], dtype=data.dtype)
        i = idx[:, valid]
        out[valid] = data[i[0], i[1], i[2]]
        return out
    if mode != "trilinear":
        raise VolumeError(f"unknown interpolation mode {mode!r}")
    valid = np.all((coords >= -0.5) & (coords <= dims - 0.5), axis=0)
    c = np.clip(coords, 0, dims - 1)
    lo = np.floor(c).astype(np.int64)
    lo = np.minimum(lo, dims - 1)
    frac = c - lo
    hi = np.minimum(lo + 1, dims - 1)
    src = data.astype(float)
    out = np.zeros(coords.shape[1])
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        w = np.ones(coords.shape[1])
        ix = []
        for a, b in enumerate(bits):
            w = w * (frac[a] if b else 1.0 - frac[a])
            ix.append(hi[a] if b else lo[a])
        out += w * src[ix[0], ix[1], ix[2]]
    if outside == "zero":
        out[~valid] = 0.0
    return out


def _index_grid(dims) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(d, dtype=float) for d in dims], indexing="ij")
    return np.stack([g.ravel() for g in grids])


def resample_to_shape(vol: Volume3D, target_dims, mode: str = "trilinear") -> Volume3D:
    target = tuple(int(d) for d in target_dims)
    if len(target) != 3 or any(d <= 0 for d in target):
        raise VolumeError(f"target_dims must be 3 positive ints, got {target_dims}")
    if vol.is_label and mode != "nearest":
        raise ModeLabelMismatch("label volumes must be resampled with nearest-neighbour")
    old = np.asarray(vol.dims, dtype=float)
    new = np.asarray(target, dtype=float)
    scale = old / new
    grid = _index_grid(target)
    # voxel-centre alignment: extent of the grid is preserved
    src = (grid + 0.5) * scale[:, None] - 0.5
    data = _sample(vol.voxels, src, mode, outside="clamp").reshape(target)
    spacing = np.asarray(vol.spacing) * scale
    shift = vol.direction @ ((spacing - np.asarray(vol.spacing)) / 2.0)
    origin = np.asarray(vol.origin) + shift
    if mode == "nearest":
        data = data.astype(vol.voxels.dtype)
    return Volume3D(data, tuple(spacing), tuple(origin), vol.direction,
                    is_label=vol.is_label, meta=dict(vol.meta))


# -- affine transforms ------------------------------------------------------

def check_affine(xform) -> np.ndarray:
    m = np.asarray(xform, dtype=float)
    if m.shape != (4, 4):
        raise SingularTransform(f"expected a 4x4 matrix, got shape {m.shape}")
    if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-12):
        raise SingularTransform(f"last row must be (0,0,0,1), got {m[3].tolist()}")
    if abs(np.linalg.det(m[:3, :3])) <= _DET_EPS:
        raise SingularTransform("upper 3x3 block is singular")
    return m


def invert_affine(xform) -> np.ndarray:
    m = check_affine(xform)
    lin_inv = np.linalg.inv(m[:3, :3])
    out = np.eye(4)
    out[:3, :3] = lin_inv
    out[:3, 3] = -lin_inv @ m[:3, 3]
    return out


def apply_affine(vol: Volume3D, xform, ref, mode: str | None = None) -> Volume3D:
    """Resample ``vol`` onto the grid of ``ref`` through ``xform``.

    ``xform`` maps world coordinates of ``vol``'s space into ``ref``'s space;
    each output voxel pulls its value from ``xform^-1`` applied to its centre.
    Points falling outside ``vol`` are background (0).
    """
    m = check_affine(xform)
    geom = ref.geometry if isinstance(ref, Volume3D) else ref
    if mode is None:
        mode = "nearest" if vol.is_label else "trilinear"
    if vol.is_label and mode != "nearest":
        raise ModeLabelMismatch("label volumes must be warped with nearest-neighbour")
    pull = invert_affine(vol.affine) @ invert_affine(m) @ geom.affine
    grid = _index_grid(geom.dims)
    src = pull[:3, :3] @ grid + pull[:3, 3:4]
    data = _sample(vol.voxels, src, mode, outside="zero").reshape(geom.dims)
    if mode == "nearest":
        data = data.astype(vol.voxels.dtype)
    return Volume3D.on_geometry(data, geom, is_label=vol.is_label, meta=dict(vol.meta))


def translation(offset) -> np.ndarray:
    out = np.eye(4)
    out[:3, 3] = offset
    return out


def load_affine_text(path: Union[str, Path]) -> np.ndarray:
    """Read a FLIRT-style matrix: 16 whitespace-separated reals, row-major."""
    values = Path(path).read_text().split()
    if len(values) != 16:
        raise VolumeError(f"{path}: expected 16 reals, found {len(values)}")
    return check_affine(np.array([float(v) for v in values]).reshape(4, 4))


def save_affine_text(xform, path: Union[str, Path]) -> None:
    m = np.asarray(xform, dtype=float)
    lines = ["  ".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


# -- tumour classes ---------------------------------------------------------

def _labels_of(mask) -> np.ndarray:
    return np.asarray(mask.voxels if isinstance(mask, Volume3D) else mask)


def merge_mask_classes(mask) -> Dict[str, np.ndarray]:
    """Composite tumour regions: TC = NC | ET, WT = NC | ED | ET."""
    labels = _labels_of(mask)
    check_labels(labels)
    return {
        "TC": np.isin(labels, (NC, ET)),
        "WT": np.isin(labels, (NC, ED, ET)),
    }


TUMOR_CLASSES = ("ED", "NC", "ET", "TC", "WT")


def class_masks(mask, binary_wt: bool = False) -> Dict[str, np.ndarray | None]:
    """All five tumour regions as boolean arrays.

    A binary whole-tumour mask (values {0, 1}) carries no sub-region
    information, so only ``WT`` is populated and the rest are ``None``.
    """
    labels = _labels_of(mask)
    if binary_wt:
        check_labels(labels, allowed=(0, 1))
        return {"ED": None, "NC": None, "ET": None, "TC": None, "WT": labels == 1}
    merged = merge_mask_classes(labels)
    return {
        "ED": labels == ED,
        "NC": labels == NC,
        "ET": labels == ET,
        "TC": merged["TC"],
        "WT": merged["WT"],
    }
