"""Parse the DICOM Part-10 subset needed for curation and stacking.

Only little-endian transfer syntaxes (explicit or implicit VR) are decoded; a
handful of tags is captured and everything else is skipped by length.
"""

from __future__ import annotations

import json
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    DicomError,
    InconsistentGeometry,
    MissingMagic,
    TruncatedElement,
    UnsupportedTransferSyntax,
)
from .volume import Volume3D

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
EXPLICIT_VR_BE = "1.2.840.10008.1.2.2"
DEFLATED_LE = "1.2.840.10008.1.2.1.99"
NATIVE_SYNTAXES = (IMPLICIT_VR_LE, EXPLICIT_VR_LE)

# VRs whose explicit encoding uses 2 reserved bytes and a 4-byte length
_LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC",
             b"UN", b"UR", b"UT", b"UV"}
_UNDEFINED = 0xFFFFFFFF


@dataclass(frozen=True, order=True)
class DicomTag:
    group: int
    element: int

    def __post_init__(self):
        for v in (self.group, self.element):
            if not 0 <= v <= 0xFFFF:
                raise ValueError(f"tag component {v!r} out of 16-bit range")

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"


TRANSFER_SYNTAX = DicomTag(0x0002, 0x0010)
IMAGE_TYPE = DicomTag(0x0008, 0x0008)
SOP_INSTANCE_UID = DicomTag(0x0008, 0x0018)
SERIES_DESCRIPTION = DicomTag(0x0008, 0x103E)
MR_ACQUISITION_TYPE = DicomTag(0x0018, 0x0023)
ANGIO_FLAG = DicomTag(0x0018, 0x0025)
STUDY_UID = DicomTag(0x0020, 0x000D)
SERIES_UID = DicomTag(0x0020, 0x000E)
SERIES_NUMBER = DicomTag(0x0020, 0x0011)
INSTANCE_NUMBER = DicomTag(0x0020, 0x0013)
IMAGE_POSITION = DicomTag(0x0020, 0x0032)
IMAGE_ORIENTATION = DicomTag(0x0020, 0x0037)
SAMPLES_PER_PIXEL = DicomTag(0x0028, 0x0002)
ROWS = DicomTag(0x0028, 0x0010)
COLUMNS = DicomTag(0x0028, 0x0011)
PIXEL_SPACING = DicomTag(0x0028, 0x0030)
BITS_ALLOCATED = DicomTag(0x0028, 0x0100)
PIXEL_REPRESENTATION = DicomTag(0x0028, 0x0103)
PIXEL_DATA = DicomTag(0x7FE0, 0x0010)

# captured tag -> (InstanceMeta field, VR used for implicit-VR decoding)
CAPTURED = {
    IMAGE_TYPE: ("image_type", "CS"),
    SOP_INSTANCE_UID: ("sop_uid", "UI"),
    SERIES_DESCRIPTION: ("series_description", "LO"),
    MR_ACQUISITION_TYPE: ("mr_acq_type", "CS"),
    ANGIO_FLAG: ("angio_flag", "CS"),
    STUDY_UID: ("study_uid", "UI"),
    SERIES_UID: ("series_uid", "UI"),
    SERIES_NUMBER: ("series_number", "IS"),
    INSTANCE_NUMBER: ("instance_number", "IS"),
    IMAGE_POSITION: ("image_position_patient", "DS"),
    IMAGE_ORIENTATION: ("image_orientation_patient", "DS"),
    SAMPLES_PER_PIXEL: ("samples_per_pixel", "US"),
    ROWS: ("rows", "US"),
    COLUMNS: ("cols", "US"),
    PIXEL_SPACING: ("pixel_spacing", "DS"),
    BITS_ALLOCATED: ("bits_allocated", "US"),
    PIXEL_REPRESENTATION: ("pixel_representation", "US"),
}


@dataclass(frozen=True)
class InstanceMeta:
    series_uid: str
    sop_uid: str
    series_description: Optional[str] = None
    image_type: Optional[Tuple[str, ...]] = None
    angio_flag: Optional[str] = None
    mr_acq_type: Optional[str] = None
    image_orientation_patient: Optional[Tuple[float, ...]] = None
    image_position_patient: Optional[Tuple[float, ...]] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    pixel_spacing: Optional[Tuple[float, float]] = None
    series_number: Optional[int] = None
    instance_number: Optional[int] = None
    study_uid: Optional[str] = None
    bits_allocated: Optional[int] = None
    pixel_representation: Optional[int] = None
    samples_per_pixel: Optional[int] = None
    transfer_syntax: Optional[str] = None
    compressed: bool = False

    def __post_init__(self):
        if not self.series_uid:
            raise DicomError("series_uid must be non-empty")
        iop = self.image_orientation_patient
        if iop is not None:
            if len(iop) != 6:
                raise DicomError(f"image orientation needs 6 values, got {len(iop)}")
            for vec in (iop[:3], iop[3:]):
                if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-3:
                    raise DicomError(f"direction cosine {vec} is not unit length")
        for name in ("rows", "cols"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise DicomError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class DicomInstance:
    meta: InstanceMeta
    pixel_data: Optional[bytes] = None


@dataclass(frozen=True)
class SeriesRecord:
    series_uid: str
    instances: Tuple[InstanceMeta, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise DicomError(f"series {self.series_uid} has no instances")
        for inst in self.instances:
            if inst.series_uid != self.series_uid:
                raise DicomError(
                    f"instance {inst.sop_uid} belongs to {inst.series_uid}, "
                    f"not {self.series_uid}")

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def first(self) -> InstanceMeta:
        return self.instances[0]

    # convenience views over the representative (first) instance
    @property
    def description(self) -> Optional[str]:
        return self.first.series_description

    @property
    def series_number(self) -> Optional[int]:
        return self.first.series_number


# -- byte-level parsing ----------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def need(self, n: int, what: str) -> None:
        if self.pos + n > len(self.buf):
            raise TruncatedElement(
                f"{what}: need {n} bytes at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left")

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        self.need(size, what)
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def take(self, n: int, what: str) -> bytes:
        self.need(n, what)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def _read_header(r: _Reader, explicit: bool):
    group, elem = r.unpack("<HH", "tag")
    tag = DicomTag(group, elem)
    if group == 0xFFFE:
        (length,) = r.unpack("<I", f"{tag} length")
        return tag, None, length
    if explicit:
        vr = r.take(2, f"{tag} VR")
        if vr in _LONG_VRS:
            r.take(2, f"{tag} reserved")
            (length,) = r.unpack("<I", f"{tag} length")
        else:
            (length,) = r.unpack("<H", f"{tag} length")
        return tag, vr.decode("ascii", "replace"), length
    (length,) = r.unpack("<I", f"{tag} length")
    return tag, None, length


def _skip_undefined(r: _Reader, explicit: bool) -> None:
    """Skip an undefined-length sequence or encapsulated pixel data."""
    while True:
        tag, _vr, length = _read_header(r, explicit)
        if tag == DicomTag(0xFFFE, 0xE0DD):  # sequence delimiter
            return
        if tag != DicomTag(0xFFFE, 0xE000):
            raise DicomError(f"expected item tag inside sequence, found {tag}")
        if length != _UNDEFINED:
            r.take(length, f"item at {r.pos}")
            continue
        while True:  # undefined-length item: walk nested elements
            ntag, nvr, nlen = _read_header(r, explicit)
            if ntag == DicomTag(0xFFFE, 0xE00D):
                break
            if nlen == _UNDEFINED:
                _skip_undefined(r, explicit)
            else:
                r.take(nlen, f"{ntag} value")


def _text(raw: bytes) -> str:
    return raw.decode("latin-1").rstrip("\x00 ").lstrip(" ")


def _decode(vr: str, raw: bytes):
    if vr == "US":
        if len(raw) < 2:
            raise TruncatedElement("US value shorter than 2 bytes")
        return struct.unpack_from("<H", raw, 0)[0]
    text = _text(raw)
    if vr == "IS":
        return int(text) if text else None
    if vr == "DS":
        parts = [p.strip() for p in text.split("\\")]
        return tuple(float(p) for p in parts if p)
    if vr == "CS" and raw:
        return text
    return text


def read_dicom(data: Union[bytes, bytearray, memoryview], *,
               allow_compressed: bool = False) -> DicomInstance:
    """Parse a Part-10 byte stream into metadata plus raw pixel bytes.

    With ``allow_compressed=True`` encapsulated transfer syntaxes are accepted
    for metadata only (``meta.compressed`` is set, no pixel bytes returned).
    """
    buf = bytes(data)
    if len(buf) >= 132 and buf[128:132] == b"DICM":
        start = 132
    elif len(buf) >= 8 and buf[0:2] == b"\x02\x00" and buf[4:6].isalpha():
        start = 0
    else:
        raise MissingMagic("no DICM magic after the preamble and no leading meta group")

    r = _Reader(buf, start)
    ts = None
    while r.pos + 4 <= len(buf):
        (group,) = struct.unpack_from("<H", buf, r.pos)
        if group != 0x0002:
            break
        tag, _vr, length = _read_header(r, explicit=True)
        value = r.take(length, f"{tag} value")
        if tag == TRANSFER_SYNTAX:
            ts = _text(value)
    if ts is None:
        raise UnsupportedTransferSyntax("file meta group carries no transfer syntax")

    compressed = False
    if ts == IMPLICIT_VR_LE:
        explicit = False
    elif ts == EXPLICIT_VR_LE:
        explicit = True
    elif ts in (EXPLICIT_VR_BE, DEFLATED_LE):
        raise UnsupportedTransferSyntax(f"transfer syntax {ts} is not supported")
    else:
        # every other standard syntax is encapsulated (JPEG, JPEG-LS, RLE, ...)
        if not allow_compressed:
            raise UnsupportedTransferSyntax(f"compressed transfer syntax {ts}")
        explicit = True
        compressed = True

    fields: Dict[str, object] = {"transfer_syntax": ts, "compressed": compressed}
    pixel = None
    while r.pos < len(buf):
        tag, vr, length = _read_header(r, explicit)
        if length == _UNDEFINED:
            if tag == PIXEL_DATA and not compressed:
                raise UnsupportedTransferSyntax(
                    "encapsulated pixel data under a native transfer syntax")
            _skip_undefined(r, explicit)
            continue
        raw = r.take(length, f"{tag} value")
        if tag == PIXEL_DATA:
            pixel = raw
            continue
        spec = CAPTURED.get(tag)
        if spec is None:
            continue
        name, default_vr = spec
        value = _decode(vr if vr and vr in ("US", "IS", "DS") else default_vr, raw)
        if name == "image_type":
            value = tuple(p.strip() for p in value.split("\\")) if value else None
        elif name in ("series_description", "angio_flag", "mr_acq_type") and value == "":
            value = None
        fields[name] = value

    if "series_uid" not in fields or not fields["series_uid"]:
        raise DicomError("file has no Series Instance UID (0020,000E)")
    fields.setdefault("sop_uid", "")
    meta = InstanceMeta(**fields)
    return DicomInstance(meta, None if compressed else pixel)


def parse_dicom_file(data) -> InstanceMeta:
    """Parse a byte stream (or a binary file object) into ``InstanceMeta``."""
    if hasattr(data, "read"):
        data = data.read()
    return read_dicom(data).meta


def read_dicom_path(path: Union[str, Path], *, allow_compressed: bool = False) -> DicomInstance:
    return read_dicom(Path(path).read_bytes(), allow_compressed=allow_compressed)


# -- grouping and stacking ---------------------------------------------------

def assemble_series(instances: Iterable[InstanceMeta]) -> List[SeriesRecord]:
    groups: Dict[str, List[InstanceMeta]] = defaultdict(list)
    for inst in instances:
        groups[inst.series_uid].append(inst)
    return [SeriesRecord(uid, tuple(groups[uid])) for uid in sorted(groups)]


def slice_normal(iop: Sequence[float]) -> np.ndarray:
    row = np.asarray(iop[:3], dtype=float)
    col = np.asarray(iop[3:6], dtype=float)
    return np.cross(row, col)


def _decode_pixels(meta: InstanceMeta, payload: bytes) -> np.ndarray:
    if meta.samples_per_pixel not in (None, 1):
        raise InconsistentGeometry(f"{meta.sop_uid}: only monochrome pixel data is supported")
    bits = meta.bits_allocated or 16
    if bits == 8:
        dtype = np.dtype("u1")
    elif bits == 16:
        dtype = np.dtype("<i2") if meta.pixel_representation == 1 else np.dtype("<u2")
    else:
        raise InconsistentGeometry(f"{meta.sop_uid}: unsupported BitsAllocated={bits}")
    count = meta.rows * meta.cols
    if len(payload) < count * dtype.itemsize:
        raise TruncatedElement(f"{meta.sop_uid}: pixel data shorter than rows*cols")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(meta.rows, meta.cols)
    return arr.astype(dtype.newbyteorder("="))


def series_to_volume(series: SeriesRecord, pixel_payloads: Sequence[bytes]) -> Volume3D:
    """Stack the slices of a series into a volume (RAS world coordinates).

    Array axes: 0 runs along the row direction cosine (image columns), 1 along
    the column cosine (image rows), 2 along the slice normal.
    """
    insts = list(series.instances)
    if len(pixel_payloads) != len(insts):
        raise InconsistentGeometry(
            f"{series.series_uid}: {len(pixel_payloads)} payloads for {len(insts)} instances")
    ref = insts[0]
    if ref.rows is None or ref.cols is None:
        raise InconsistentGeometry(f"{series.series_uid}: rows/columns missing")
    for inst in insts[1:]:
        if (inst.rows, inst.cols) != (ref.rows, ref.cols):
            raise InconsistentGeometry(f"{series.series_uid}: slice matrix sizes differ")
        for name in ("pixel_spacing", "image_orientation_patient"):
            a, b = getattr(inst, name), getattr(ref, name)
            if (a is None) != (b is None) or (
                    a is not None and not np.allclose(a, b, atol=1e-4)):
                raise InconsistentGeometry(f"{series.series_uid}: {name} differs between slices")

    iop = ref.image_orientation_patient or (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    normal = slice_normal(iop)
    positions_known = all(i.image_position_patient is not None for i in insts)
    meta: Dict[str, object] = {"series_uid": series.series_uid,
                               "position_fallback": not positions_known}
    if positions_known:
        proj = [float(np.dot(i.image_position_patient, normal)) for i in insts]
        order = sorted(range(len(insts)), key=lambda k: (proj[k], insts[k].sop_uid))
        sorted_proj = np.array([proj[k] for k in order])
        gaps = np.diff(sorted_proj)
    else:
        order = sorted(range(len(insts)),
                       key=lambda k: (insts[k].instance_number or 0, insts[k].sop_uid))
        gaps = np.array([])

    if gaps.size:
        slice_gap = float(np.mean(gaps))
        meta["slice_spacing_uniform"] = bool(np.allclose(gaps, slice_gap, rtol=1e-3, atol=1e-4))
        if slice_gap <= 0:
            raise InconsistentGeometry(f"{series.series_uid}: coincident slice positions")
    else:
        slice_gap = 1.0
        meta["slice_spacing_uniform"] = True

    slices = [_decode_pixels(insts[k], pixel_payloads[k]) for k in order]
    # pixel (r, c) -> voxel (c, r)
    voxels = np.stack([s.T for s in slices], axis=-1)
    ps = ref.pixel_spacing or (1.0, 1.0)
    spacing = (float(ps[1]), float(ps[0]), slice_gap)
    lps_to_ras = np.diag([-1.0, -1.0, 1.0])
    direction = lps_to_ras @ np.column_stack(
        [np.asarray(iop[:3], float), np.asarray(iop[3:6], float), normal])
    first = insts[order[0]]
    origin = lps_to_ras @ np.asarray(first.image_position_patient or (0.0, 0.0, 0.0), float)
    meta["slice_order"] = [insts[k].sop_uid for k in order]
    return Volume3D(voxels, spacing, tuple(origin), direction, meta=meta)


# -- session manifests ------------------------------------------------------

def series_manifest_entry(series: SeriesRecord) -> dict:
    m = series.first
    return {
        "series_uid": series.series_uid,
        "description": m.series_description,
        "image_type": list(m.image_type) if m.image_type is not None else None,
        "angio_flag": m.angio_flag,
        "mr_acq_type": m.mr_acq_type,
        "iop": list(m.image_orientation_patient) if m.image_orientation_patient else None,
        "n_instances": series.n_instances,
        "series_number": m.series_number,
    }


def session_manifest(session_id: str, series: Iterable[SeriesRecord]) -> dict:
    return {"session_id": session_id,
            "series": [series_manifest_entry(s) for s in series]}


@dataclass
class ManifestSession:
    session_id: str
    series: List[SeriesRecord]
    images: Dict[str, str] = field(default_factory=dict)


def series_from_manifest_entry(entry: dict) -> SeriesRecord:
    n = int(entry.get("n_instances", 1))
    if n < 1:
        raise DicomError(f"series {entry.get('series_uid')}: n_instances must be >= 1")
    uid = entry["series_uid"]
    image_type = entry.get("image_type")
    iop = entry.get("iop")
    base = dict(
        series_uid=uid,
        series_description=entry.get("description"),
        image_type=tuple(image_type) if image_type is not None else None,
        angio_flag=entry.get("angio_flag"),
        mr_acq_type=entry.get("mr_acq_type"),
        image_orientation_patient=tuple(float(v) for v in iop) if iop else None,
        series_number=entry.get("series_number"),
    )
    insts = tuple(InstanceMeta(sop_uid=f"{uid}.{k + 1}", instance_number=k + 1, **base)
                  for k in range(n))
    return SeriesRecord(uid, insts)


def load_manifest(source: Union[str, Path, dict]) -> ManifestSession:
    """Read a JSON session manifest (path or already-parsed dict).

    A series entry may carry an optional ``image`` key naming a NIfTI file with
    the series pixels; relative paths resolve against the manifest location.
    """
    base_dir = None
    if isinstance(source, dict):
        doc = source
    else:
        base_dir = Path(source).parent
        doc = json.loads(Path(source).read_text())
    if "session_id" not in doc or "series" not in doc:
        raise DicomError("manifest needs 'session_id' and 'series'")
    records = [series_from_manifest_entry(e) for e in doc["series"]]
    images = {}
    for e in doc["series"]:
        if e.get("image"):
            p = Path(e["image"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            images[e["series_uid"]] = str(p)
    return ManifestSession(str(doc["session_id"]), records, images)
