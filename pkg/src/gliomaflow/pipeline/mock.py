"""Deterministic stand-ins for the external stages (tests and demos only).

Run as ``python -m gliomaflow.pipeline.mock DESCRIPTOR.json`` to exercise the
command-adapter protocol with the same behaviour as the in-process mocks.
"""

from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np
from scipy import ndimage

from ..curation import SequenceClass, fallback_stage2
from ..errors import AdapterFailure
from ..nifti import read_nifti, write_nifti
from ..volume import ED, ET, NC, Volume3D, apply_affine, save_affine_text, translation
from .adapters import Invocation, StageKind

DEFAULT_THRESHOLDS = {"t_et": 3.0, "t_nc": -3.0, "t_ed": 3.0}


def _array(v):
    return np.asarray(v.voxels if isinstance(v, Volume3D) else v, dtype=float)


def mock_segmenter(vols: Mapping, thresholds: Optional[Mapping[str, float]] = None,
                   binary_wt: Optional[bool] = None):
    """Threshold labelling used in place of the segmentation network.

    With Gd-T1WI: ET where Gd > t_et; NC where Gd < t_nc inside the cavities
    enclosed by ET; ED where FLAIR (T2WI if no FLAIR) > t_ed elsewhere.
    Without Gd-T1WI the result is binary whole tumour (1 where FLAIR/T2 >
    t_ed).  Returns a label volume when the inputs are volumes, else an array.
    """
    if not vols:
        raise ValueError("mock_segmenter needs at least one input volume")
    thr = dict(DEFAULT_THRESHOLDS)
    thr.update(thresholds or {})
    by_class = {SequenceClass(k): v for k, v in vols.items()}
    first = next(iter(by_class.values()))
    shape = _array(first).shape
    gd = by_class.get(SequenceClass.GdT1WI)
    fluid = by_class.get(SequenceClass.FLAIR, by_class.get(SequenceClass.T2WI))
    if binary_wt is None:
        binary_wt = gd is None
    labels = np.zeros(shape, dtype=np.uint8)
    if binary_wt:
        if fluid is not None:
            labels[_array(fluid) > thr["t_ed"]] = 1
    else:
        if gd is None:
            raise ValueError("multi-class labelling requires Gd-T1WI")
        g = _array(gd)
        et = g > thr["t_et"]
        cavity = ndimage.binary_fill_holes(et) & ~et
        nc = cavity & (g < thr["t_nc"])
        if fluid is not None:
            labels[_array(fluid) > thr["t_ed"]] = ED
        labels[nc] = NC
        labels[et] = ET
    if isinstance(first, Volume3D):
        return first.with_voxels(labels, is_label=True, mock_segmenter=True,
                                 binary_wt=bool(binary_wt))
    return labels


# -- stage functions ------------------------------------------------------------

def registration(inv: Invocation) -> None:
    """Assume the inputs are co-registered; map them to the atlas by translation.

    params: ``translation_mm`` (3 reals), optional ``atlas`` (NIfTI path whose
    grid is the output grid; default: the target's grid), ``interpolation``
    for the images (default trilinear).
    inputs: images (first is the target); outputs: one image per input, then
    the patient-to-atlas matrix text file.
    """
    *images_out, xform_out = inv.outputs
    if len(images_out) != len(inv.inputs):
        raise AdapterFailure("registration: need one output per input plus the matrix")
    xform = translation(inv.params.get("translation_mm", (0.0, 0.0, 0.0)))
    vols = [read_nifti(p) for p in inv.inputs]
    atlas = inv.params.get("atlas")
    ref = read_nifti(atlas).geometry if atlas else vols[0].geometry
    for vol, out in zip(vols, images_out):
        write_nifti(apply_affine(vol, xform, ref, mode=inv.params.get("interpolation",
                                                                     "trilinear")), out)
    save_affine_text(xform, xform_out)


def bias_correction(inv: Invocation) -> None:
    if len(inv.outputs) != len(inv.inputs):
        raise AdapterFailure("bias correction: one output per input")
    for src, dst in zip(inv.inputs, inv.outputs):
        shutil.copyfile(src, dst)


def skull_strip(inv: Invocation) -> None:
    """Brain = non-zero in any input, holes filled; last output is the mask."""
    *images_out, mask_out = inv.outputs
    vols = [read_nifti(p) for p in inv.inputs]
    brain = np.zeros(vols[0].dims, dtype=bool)
    for v in vols:
        brain |= v.voxels != 0
    brain = ndimage.binary_fill_holes(brain)
    for v, out in zip(vols, images_out):
        write_nifti(v.with_voxels(np.where(brain, v.voxels, 0).astype(v.voxels.dtype)), out)
    write_nifti(vols[0].with_voxels(brain.astype(np.uint8), is_label=True), mask_out)


def segmentation(inv: Invocation) -> None:
    classes = inv.params["classes"]
    if len(classes) != len(inv.inputs):
        raise AdapterFailure("segmentation: params.classes must align with inputs")
    vols = {c: read_nifti(p) for c, p in zip(classes, inv.inputs)}
    route = inv.params.get("route", "MultiClass")
    mask = mock_segmenter(vols, inv.params.get("thresholds"), binary_wt=route == "BinaryWT")
    write_nifti(mask, inv.outputs[0])


def classifier(inv: Invocation) -> None:
    """Stage-2 classifier double: a fixed ``label`` param, else token fallback."""
    series = inv.params["series"]
    label = inv.params.get("label") or fallback_stage2(series.get("description") or "").value
    Path(inv.outputs[0]).write_text(json.dumps({"label": label, "confidence": 1.0}))


def _failable(func):
    """Honour ``params.fail`` so tests can inject a failing stage."""
    def run(inv: Invocation) -> None:
        if inv.params.get("fail"):
            raise AdapterFailure(f"mock {inv.kind.value} asked to fail")
        func(inv)
    run.__name__ = func.__name__
    return run


MOCK_STAGES: Dict[StageKind, object] = {
    StageKind.Registration: _failable(registration),
    StageKind.BiasCorrection: _failable(bias_correction),
    StageKind.SkullStrip: _failable(skull_strip),
    StageKind.Segmentation: _failable(segmentation),
    StageKind.ClassifierStage2: _failable(classifier),
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m gliomaflow.pipeline.mock DESCRIPTOR.json", file=sys.stderr)
        return 2
    inv = Invocation.from_json(Path(argv[0]).read_text())
    try:
        MOCK_STAGES[inv.kind](inv)
    except AdapterFailure as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
