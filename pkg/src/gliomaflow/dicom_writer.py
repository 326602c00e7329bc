"""Author small synthetic DICOM Part-10 files.

Used for phantom corpora and parser fixtures; emits only the tags this
package reads plus pixel data.
"""

from __future__ import annotations

import struct
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dicom_ingest import (
    ANGIO_FLAG, BITS_ALLOCATED, COLUMNS, EXPLICIT_VR_LE, IMAGE_ORIENTATION,
    IMAGE_POSITION, IMAGE_TYPE, IMPLICIT_VR_LE, INSTANCE_NUMBER,
    MR_ACQUISITION_TYPE, PIXEL_DATA, PIXEL_REPRESENTATION, PIXEL_SPACING, ROWS,
    SAMPLES_PER_PIXEL, SERIES_DESCRIPTION, SERIES_NUMBER, SERIES_UID,
    SOP_INSTANCE_UID, STUDY_UID, DicomTag, InstanceMeta,
)

_LONG = {"OB", "OW", "SQ", "UN", "UT"}


def _format_ds(v: float) -> str:
    text = repr(float(v))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def _element(tag: DicomTag, vr: str, value: bytes, explicit: bool) -> bytes:
    if len(value) % 2:
        value += b"\x00" if vr in ("UI", "OB") else b" "
    head = struct.pack("<HH", tag.group, tag.element)
    if not explicit:
        return head + struct.pack("<I", len(value)) + value
    if vr in _LONG:
        return head + vr.encode() + b"\x00\x00" + struct.pack("<I", len(value)) + value
    return head + vr.encode() + struct.pack("<H", len(value)) + value


def _str(s: str) -> bytes:
    return s.encode("latin-1")


def encode_instance(meta: InstanceMeta, pixels: Optional[np.ndarray] = None, *,
                    transfer_syntax: str = EXPLICIT_VR_LE, preamble: bool = True,
                    extra: Sequence[Tuple[DicomTag, str, bytes]] = ()) -> bytes:
    """Serialise ``meta`` (and optional 2-D ``pixels`` of shape rows x cols).

    ``extra`` elements (tag, VR, raw value) are inserted in tag order, which
    lets tests plant unknown tags and sequences the parser must skip.
    """
    explicit = transfer_syntax != IMPLICIT_VR_LE
    elems: List[Tuple[DicomTag, str, bytes]] = []

    def add(tag, vr, value):
        if value is not None:
            elems.append((tag, vr, value))

    add(IMAGE_TYPE, "CS", _str("\\".join(meta.image_type)) if meta.image_type is not None else None)
    add(SOP_INSTANCE_UID, "UI", _str(meta.sop_uid) if meta.sop_uid else None)
    add(SERIES_DESCRIPTION, "LO",
        _str(meta.series_description) if meta.series_description is not None else None)
    add(MR_ACQUISITION_TYPE, "CS", _str(meta.mr_acq_type) if meta.mr_acq_type else None)
    add(ANGIO_FLAG, "CS", _str(meta.angio_flag) if meta.angio_flag else None)
    add(STUDY_UID, "UI", _str(meta.study_uid) if meta.study_uid else None)
    add(SERIES_UID, "UI", _str(meta.series_uid))
    add(SERIES_NUMBER, "IS", _str(str(meta.series_number)) if meta.series_number is not None else None)
    add(INSTANCE_NUMBER, "IS",
        _str(str(meta.instance_number)) if meta.instance_number is not None else None)
    if meta.image_position_patient is not None:
        add(IMAGE_POSITION, "DS", _str("\\".join(_format_ds(v) for v in meta.image_position_patient)))
    if meta.image_orientation_patient is not None:
        add(IMAGE_ORIENTATION, "DS",
            _str("\\".join(_format_ds(v) for v in meta.image_orientation_patient)))
    if meta.pixel_spacing is not None:
        add(PIXEL_SPACING, "DS", _str("\\".join(_format_ds(v) for v in meta.pixel_spacing)))

    pixel_bytes = None
    if pixels is not None:
        arr = np.asarray(pixels)
        if arr.dtype == np.uint8:
            bits, rep = 8, 0
        elif arr.dtype == np.int16:
            bits, rep = 16, 1
        else:
            arr = arr.astype("<u2")
            bits, rep = 16, 0
        rows, cols = arr.shape
        add(SAMPLES_PER_PIXEL, "US", struct.pack("<H", 1))
        add(ROWS, "US", struct.pack("<H", rows))
        add(COLUMNS, "US", struct.pack("<H", cols))
        add(BITS_ALLOCATED, "US", struct.pack("<H", bits))
        add(PIXEL_REPRESENTATION, "US", struct.pack("<H", rep))
        pixel_bytes = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    else:
        if meta.rows is not None:
            add(ROWS, "US", struct.pack("<H", meta.rows))
        if meta.cols is not None:
            add(COLUMNS, "US", struct.pack("<H", meta.cols))

    elems.extend(extra)
    elems.sort(key=lambda e: e[0])
    body = b"".join(_element(t, vr, v, explicit) for t, vr, v in elems)
    if pixel_bytes is not None:
        vr = "OB" if bits == 8 else "OW"
        body += _element(PIXEL_DATA, vr, pixel_bytes, explicit)

    ts_elem = _element(DicomTag(0x0002, 0x0010), "UI", _str(transfer_syntax), True)
    group_len = _element(DicomTag(0x0002, 0x0000), "UL", struct.pack("<I", len(ts_elem)), True)
    head = (b"\x00" * 128 + b"DICM") if preamble else b""
    return head + group_len + ts_elem + body


def sequence_element(tag: DicomTag, items: Iterable[bytes], *, undefined: bool = True,
                     explicit: bool = True) -> bytes:
    """Raw encoding of an SQ element whose items hold pre-encoded datasets."""
    payload = b""
    for item in items:
        if undefined:
            payload += struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF) + item
            payload += struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
        else:
            payload += struct.pack("<HHI", 0xFFFE, 0xE000, len(item)) + item
    head = struct.pack("<HH", tag.group, tag.element)
    if explicit:
        head += b"SQ\x00\x00"
    if undefined:
        return head + struct.pack("<I", 0xFFFFFFFF) + payload + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    return head + struct.pack("<I", len(payload)) + payload


def encode_element(tag: DicomTag, vr: str, value: bytes, explicit: bool = True) -> bytes:
    return _element(tag, vr, value, explicit)


def series_slices(*, series_uid: str, description: Optional[str], volume: np.ndarray,
                  spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                  iop=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0), series_number: int = 1,
                  study_uid: str = "1.2.3", image_type=("ORIGINAL", "PRIMARY", "M", "ND"),
                  angio_flag: Optional[str] = "N", mr_acq_type: str = "2D",
                  transfer_syntax: str = EXPLICIT_VR_LE) -> List[bytes]:
    """Encode a volume ``[i, j, k]`` as one DICOM file per k-slice.

    ``origin`` is the LPS position of voxel (0, 0, 0); slices step along the
    normal of ``iop`` by ``spacing[2]``.
    """
    vol = np.asarray(volume)
    row = np.asarray(iop[:3], float)
    col = np.asarray(iop[3:], float)
    normal = np.cross(row, col)
    out = []
    for k in range(vol.shape[2]):
        ipp = np.asarray(origin, float) + normal * spacing[2] * k
        meta = InstanceMeta(
            series_uid=series_uid,
            sop_uid=f"{series_uid}.{k + 1}",
            series_description=description,
            image_type=tuple(image_type) if image_type is not None else None,
            angio_flag=angio_flag,
            mr_acq_type=mr_acq_type,
            image_orientation_patient=tuple(float(v) for v in iop),
            image_position_patient=tuple(float(round(v, 6)) for v in ipp),
            pixel_spacing=(float(spacing[1]), float(spacing[0])),
            series_number=series_number,
            instance_number=k + 1,
            study_uid=study_uid,
        )
        out.append(encode_instance(meta, vol[:, :, k].T, transfer_syntax=transfer_syntax))
    return out
