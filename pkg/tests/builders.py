"""Small factories shared by the test modules."""

from __future__ import annotations

import itertools
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gliomaflow.curation import Orientation, Reason, SequenceClass
from gliomaflow.dicom_ingest import InstanceMeta, SeriesRecord

AXIAL = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
CORONAL = (1.0, 0.0, 0.0, 0.0, 0.0, -1.0)
SAGITTAL = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
IOP_OF = {Orientation.Axial: AXIAL, Orientation.Coronal: CORONAL,
          Orientation.Sagittal: SAGITTAL, Orientation.Unknown: None}
ORIGINAL = ("ORIGINAL", "PRIMARY", "M", "ND")


def make_series(uid: str, description: Optional[str] = "AX T2", n: int = 20,
                iop: Optional[Sequence[float]] = AXIAL,
                image_type: Optional[Tuple[str, ...]] = ORIGINAL,
                angio: Optional[str] = "N", series_number: Optional[int] = 1,
                mr_acq_type: Optional[str] = "2D") -> SeriesRecord:
    insts = [
        InstanceMeta(
            series_uid=uid,
            sop_uid=f"{uid}.{k + 1}",
            series_description=description,
            image_type=image_type,
            angio_flag=angio,
            mr_acq_type=mr_acq_type,
            image_orientation_patient=None if iop is None else tuple(iop),
            image_position_patient=(0.0, 0.0, float(k)),
            rows=8, cols=8, pixel_spacing=(1.0, 1.0),
            series_number=series_number,
            instance_number=k + 1,
        )
        for k in range(n)
    ]
    return SeriesRecord(uid, insts)


def exclusion_corpus() -> List[Tuple[SeriesRecord, Optional[Reason]]]:
    """50 series covering every exclusion rule, with the authored outcome.

    Rule precedence when several apply: description, image type, angio flag.
    """
    out: List[Tuple[SeriesRecord, Optional[Reason]]] = []
    descs = ["AX T1", "AX T2", "SAG FLAIR", "AX T1 POST GD", "COR T2"]
    kinds = [
        # (description override, image_type, angio, expected)
        ("keep", ORIGINAL, "N", None),
        ("keep", ("ORIGINAL", "PRIMARY"), None, None),
        ("keep", ORIGINAL, "n", None),
        (None, ORIGINAL, "N", Reason.NoSeriesDescription),
        ("", ORIGINAL, "N", Reason.NoSeriesDescription),
        ("   ", ORIGINAL, "N", Reason.NoSeriesDescription),
        ("keep", ("DERIVED", "SECONDARY"), "N", Reason.NotOriginalPrimary),
        ("keep", ("ORIGINAL", "SECONDARY"), "N", Reason.NotOriginalPrimary),
        ("keep", None, "N", Reason.NotOriginalPrimary),
        ("keep", ORIGINAL, "Y", Reason.AngioFlag),
    ]
    for i in range(50):
        desc_mode, itype, angio, expected = kinds[i % len(kinds)]
        desc = descs[i % len(descs)] if desc_mode == "keep" else desc_mode
        if i >= 40 and expected is Reason.NoSeriesDescription:
            itype = ("DERIVED", "PRIMARY")  # description rule still wins
        if i >= 40 and expected is Reason.NotOriginalPrimary:
            angio = "Y"  # image type rule still wins
        out.append((make_series(f"1.2.50.{i}", desc, 12, image_type=itype, angio=angio,
                                series_number=i), expected))
    return out


def prioritization_cases() -> List[dict]:
    """200 duplicate-candidate scenarios with the winner chosen by hand rules.

    Each case lists candidates as (orientation, n_instances, series_number);
    the expected winner is computed by a plain comparison chain that does
    not reuse the package's sort key.
    """
    orients = [Orientation.Axial, Orientation.Coronal, Orientation.Sagittal, Orientation.Unknown]
    counts = [30, 60, 60, 120]
    pool = list(itertools.product(orients, counts))
    rng = np.random.default_rng(7)
    cases = []
    for pair in itertools.combinations(range(len(pool)), 2):
        if len(cases) >= 120:
            break
        cases.append([pool[pair[0]], pool[pair[1]]])
    while len(cases) < 200:
        k = int(rng.integers(2, 5))
        idx = rng.choice(len(pool), size=k, replace=False)
        cases.append([pool[i] for i in idx])

    out = []
    for c, cands in enumerate(cases):
        entries = []
        for j, (orient, n) in enumerate(cands):
            number = int(rng.integers(1, 4))
            entries.append({"uid": f"9.{c}.{j}", "orientation": orient, "n": n,
                            "series_number": number})
        out.append({"candidates": entries, "winner": _hand_winner(entries)})
    return out


def _rank(orient: Orientation) -> int:
    if orient is Orientation.Axial:
        return 2
    if orient in (Orientation.Coronal, Orientation.Sagittal):
        return 1
    return 0


def _hand_winner(entries: List[dict]) -> str:
    best = entries[0]
    for e in entries[1:]:
        if _rank(e["orientation"]) != _rank(best["orientation"]):
            if _rank(e["orientation"]) > _rank(best["orientation"]):
                best = e
            continue
        if e["n"] != best["n"]:
            if e["n"] > best["n"]:
                best = e
            continue
        if e["series_number"] != best["series_number"]:
            if e["series_number"] < best["series_number"]:
                best = e
            continue
        if e["uid"] < best["uid"]:
            best = e
    return best["uid"]


def series_for_case(entry: dict, cls: SequenceClass = SequenceClass.FLAIR) -> SeriesRecord:
    return make_series(entry["uid"], "AX FLAIR", entry["n"], iop=IOP_OF[entry["orientation"]],
                       series_number=entry["series_number"])


def random_blob(rng: np.random.Generator, dims=(32, 32, 32), n_spheres: int = 3) -> np.ndarray:
    idx = np.indices(dims, dtype=float)
    out = np.zeros(dims, dtype=bool)
    for _ in range(n_spheres):
        c = rng.uniform(10, np.array(dims) - 10)
        r = rng.uniform(4, 7)
        out |= sum((idx[a] - c[a]) ** 2 for a in range(3)) <= r * r
    return out


def rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    a = np.asarray(axis, float)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def axis_aligned_iops() -> List[Tuple[Tuple[float, ...], Orientation]]:
    """All 24 signed-permutation frames with row x col = normal."""
    out = []
    basis = np.eye(3)
    for r_axis, c_axis in itertools.permutations(range(3), 2):
        for rs in (1.0, -1.0):
            for cs in (1.0, -1.0):
                row = rs * basis[r_axis]
                col = cs * basis[c_axis]
                normal_axis = 3 - r_axis - c_axis
                expected = (Orientation.Sagittal, Orientation.Coronal,
                            Orientation.Axial)[normal_axis]
                out.append((tuple(float(v) for v in np.concatenate([row, col])), expected))
    return out


# -- DICOM fixtures -------------------------------------------------------------

REQUIRED_FIELDS = ("series_uid", "sop_uid", "series_description", "image_type", "angio_flag",
                   "mr_acq_type", "image_orientation_patient", "image_position_patient",
                   "rows", "cols", "pixel_spacing", "series_number", "instance_number",
                   "study_uid")


def random_dicom_fixture(rng: np.random.Generator, i: int):
    """One varied fixture: (meta, pixels, encode kwargs, raw sequence bytes).

    Varies transfer syntax, preamble, odd-length strings, pixel dtype, and
    planted unknown elements and sequences the parser must skip.
    """
    from gliomaflow.dicom_ingest import EXPLICIT_VR_LE, IMPLICIT_VR_LE, DicomTag
    from gliomaflow.dicom_writer import encode_element, sequence_element

    rows, cols = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    r = rotation(rng.normal(size=3), rng.uniform(0, np.pi))
    iop = tuple(round(float(v), 6) for v in np.r_[r[:, 0], r[:, 1]])
    descs = ["AX T1", "AX T2 FSE", "SAG FLAIR", "T1+C", "Ax T1 POST GD 3D", "COR T2W"]
    meta = InstanceMeta(
        series_uid=f"1.2.840.{i % 7}.{i}",
        sop_uid=f"1.2.840.{i % 7}.{i}.{i + 1}" + ("1" if i % 2 else ""),
        series_description=descs[i % len(descs)] + ("x" * (i % 3)),
        image_type=("ORIGINAL", "PRIMARY", "M", "ND")[: 2 + i % 3],
        angio_flag="NY"[i % 5 == 0],
        mr_acq_type=("2D", "3D")[i % 2],
        image_orientation_patient=iop,
        image_position_patient=tuple(round(float(v), 4) for v in rng.uniform(-200, 200, 3)),
        rows=rows, cols=cols,
        pixel_spacing=(round(float(rng.uniform(0.3, 2)), 5), round(float(rng.uniform(0.3, 2)), 5)),
        series_number=int(rng.integers(1, 1000)),
        instance_number=int(rng.integers(1, 500)),
        study_uid=f"1.3.6.{i}",
    )
    dtype = [np.uint16, np.int16, np.uint8][i % 3]
    info = np.iinfo(dtype)
    pixels = rng.integers(max(info.min, -1000), min(info.max, 3000), size=(rows, cols)).astype(dtype)
    ts = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)[i % 2]
    explicit = ts == EXPLICIT_VR_LE
    nested = encode_element(DicomTag(0x0008, 0x0100), "SH", b"CODE", explicit)
    extra_raw = [
        (DicomTag(0x0009, 0x0010), "LO", b"PRIVATE CREATOR"),
        (DicomTag(0x0010, 0x0010), "PN", b"Doe^Jane"),
    ]
    kwargs = {"transfer_syntax": ts, "preamble": i % 4 != 3, "extra": extra_raw}
    seq = sequence_element(DicomTag(0x0008, 0x1140), [nested, nested],
                           undefined=i % 2 == 0, explicit=explicit)
    return meta, pixels, kwargs, seq


def encode_fixture(meta, pixels, kwargs, seq: bytes) -> bytes:
    """Encode a fixture and splice the raw sequence in just before pixel data."""
    from gliomaflow.dicom_writer import encode_instance

    blob = encode_instance(meta, pixels, **kwargs)
    at = blob.find(b"\xe0\x7f\x10\x00")
    return blob[:at] + seq + blob[at:]


def radiomics_session(seed: int = 17, missing=()):
    """Five-image session with nested NC/ET/ED spheres on a 16^3 grid."""
    from gliomaflow.radiomics import IMAGE_ORDER
    from gliomaflow.volume import ED, ET, NC, Volume3D

    rng = np.random.default_rng(seed)
    dims = (16, 16, 16)
    r = np.sqrt(((np.indices(dims) - 7.5) ** 2).sum(0))
    labels = np.zeros(dims, np.uint8)
    labels[r < 6] = ED
    labels[r < 4] = ET
    labels[r < 2] = NC
    mask = Volume3D(labels, is_label=True)
    images = {c: Volume3D(rng.normal(0, 40, dims)) for c in IMAGE_ORDER if c not in missing}
    return images, mask
