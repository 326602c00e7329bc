"""Synthetic DICOM sessions with a known tumour for end-to-end checks.

The phantom is an ellipsoidal "brain" with a gentle left-right intensity ramp
and a spherical lesion: a necrotic core, an enhancing rim on the post-contrast
series and surrounding oedema on T2 and FLAIR.  The authored label mask lives
on the same grid as the converted native series.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dicom_ingest import assemble_series, parse_dicom_file, read_dicom_path, series_to_volume
from .dicom_writer import series_slices
from .nifti import write_nifti
from .volume import BG, ED, ET, NC, Volume3D

DEFAULT_DIMS = (48, 48, 40)
DEFAULT_CENTER = (22.0, 25.0, 18.0)
# radii in voxels: core < R_NC <= rim < R_ET <= oedema < R_ED
R_NC, R_ET, R_ED = 5.0, 7.0, 10.0


@dataclass
class PhantomSeries:
    description: Optional[str]
    volume: np.ndarray
    series_number: int
    image_type: Optional[Tuple[str, ...]] = ("ORIGINAL", "PRIMARY", "M", "ND")
    angio_flag: Optional[str] = "N"


@dataclass
class Phantom:
    session_id: str
    dicom_dir: Path
    truth_path: Path
    truth: Volume3D
    files: List[Path] = field(default_factory=list)
    atlas_path: Optional[Path] = None


def _radius(dims, center, spacing) -> np.ndarray:
    idx = np.indices(dims, dtype=float)
    return np.sqrt(sum(((idx[a] - center[a]) * spacing[a]) ** 2 for a in range(3)))


def brain_mask(dims=DEFAULT_DIMS) -> np.ndarray:
    idx = np.indices(dims, dtype=float)
    c = [(d - 1) / 2.0 for d in dims]
    semi = [0.44 * d for d in dims]
    return sum(((idx[a] - c[a]) / semi[a]) ** 2 for a in range(3)) <= 1.0


def phantom_images(dims=DEFAULT_DIMS, center=DEFAULT_CENTER,
                   spacing=(1.0, 1.0, 1.0)) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gd-T1, T2 and FLAIR arrays (uint16) plus the authored label array."""
    brain = brain_mask(dims)
    ramp = 80.0 + 40.0 * np.indices(dims)[0] / max(dims[0] - 1, 1)
    base = np.where(brain, np.round(ramp), 0.0)
    r = _radius(dims, center, spacing)
    core, rim, oedema = r < R_NC, (r >= R_NC) & (r < R_ET), (r >= R_ET) & (r < R_ED)

    gd = base.copy()
    gd[rim] = 400.0
    gd[core] = 10.0
    fluid = base.copy()
    fluid[r < R_ED] = 300.0

    labels = np.full(dims, BG, dtype=np.uint8)
    labels[oedema] = ED
    labels[rim] = ET
    labels[core] = NC
    images = {"GdT1WI": gd, "T2WI": fluid.copy(), "FLAIR": fluid}
    return {k: v.astype(np.uint16) for k, v in images.items()}, labels


def make_phantom(out_dir, session_id: str = "PHANTOM01", dims: Sequence[int] = DEFAULT_DIMS,
                 center: Sequence[float] = DEFAULT_CENTER, spacing=(1.0, 1.0, 1.0),
                 distractors: bool = True, with_atlas: bool = False) -> Phantom:
    """Write ``<out_dir>/dicom/<session_id>/*.dcm`` and ``<out_dir>/truth/<session_id>.nii``."""
    out_dir = Path(out_dir)
    dims = tuple(int(d) for d in dims)
    images, labels = phantom_images(dims, center, spacing)
    series = [
        PhantomSeries("AX T1 POST GD", images["GdT1WI"], 5),
        PhantomSeries("AX T2", images["T2WI"], 3),
        PhantomSeries("AX FLAIR", images["FLAIR"], 4),
    ]
    if distractors:
        series.append(PhantomSeries("LOCALIZER", images["T2WI"][:, :, :3], 1))
        series.append(PhantomSeries("AX DWI", images["T2WI"], 2))

    ddir = out_dir / "dicom" / session_id
    ddir.mkdir(parents=True, exist_ok=True)
    files: List[Path] = []
    study = f"1.2.826.0.1.3680043.10.{int(hashlib.sha1(session_id.encode()).hexdigest()[:8], 16)}"
    for s in series:
        uid = f"{study}.{s.series_number}"
        blobs = series_slices(series_uid=uid, description=s.description, volume=s.volume,
                              spacing=spacing, origin=(60.0, 80.0, -20.0),
                              series_number=s.series_number, study_uid=study,
                              image_type=s.image_type, angio_flag=s.angio_flag)
        for k, blob in enumerate(blobs):
            f = ddir / f"s{s.series_number:02d}_{k + 1:04d}.dcm"
            f.write_bytes(blob)
            files.append(f)

    # geometry of the truth = geometry of the converted Gd series
    gd_files = sorted(ddir.glob("s05_*.dcm"))
    metas = [parse_dicom_file(f.read_bytes()) for f in gd_files]
    payloads = {m.sop_uid: read_dicom_path(f).pixel_data for m, f in zip(metas, gd_files)}
    (rec,) = assemble_series(metas)
    native = series_to_volume(rec, [payloads[m.sop_uid] for m in rec.instances])
    truth = native.with_voxels(labels, is_label=True)
    tdir = out_dir / "truth"
    tdir.mkdir(parents=True, exist_ok=True)
    truth_path = tdir / f"{session_id}.nii"
    write_nifti(truth, truth_path, description="authored phantom truth")

    atlas_path = None
    if with_atlas:
        atlas_path = out_dir / "atlas.nii"
        atlas = native.with_voxels(brain_mask(dims).astype(np.uint8) * 100)
        write_nifti(atlas, atlas_path, description="phantom atlas grid")
    return Phantom(session_id, ddir, truth_path, truth, files, atlas_path)


def phantom_config(output_root, input_root, translation_mm=(3.0, -2.0, 2.0),
                   radiomics: bool = False, atlas_path=None, command: bool = False) -> dict:
    """Run configuration wiring every stage to the mock adapters.

    With ``command=True`` the mocks run as subprocesses through the command
    protocol instead of in-process.
    """
    def entry(name, params=None):
        e = {"params": dict(params or {})}
        if command:
            e["command"] = ["{python}", "-m", "gliomaflow.pipeline.mock"]
        else:
            e["mock"] = name
        return e

    doc = {
        "output_root": str(output_root),
        "input_roots": [str(input_root)],
        "workers": 1,
        "radiomics": radiomics,
        "adapters": {
            "Registration": entry("registration", {"translation_mm": list(translation_mm)}),
            "BiasCorrection": entry("bias_correction"),
            "SkullStrip": entry("skull_strip"),
            "Segmentation": entry("segmentation"),
        },
    }
    if atlas_path is not None:
        doc["atlas_path"] = str(atlas_path)
    return doc
