from __future__ import annotations

import io
import struct
from dataclasses import replace

import numpy as np
import pytest

from builders import REQUIRED_FIELDS, encode_fixture, random_dicom_fixture
from gliomaflow.dicom_ingest import (EXPLICIT_VR_BE, EXPLICIT_VR_LE, IMPLICIT_VR_LE,
                                     PIXEL_DATA, DicomTag, InstanceMeta, SeriesRecord,
                                     assemble_series, load_manifest, parse_dicom_file, read_dicom,
                                     read_dicom_path, series_from_manifest_entry,
                                     series_manifest_entry, series_to_volume, session_manifest)
from gliomaflow.dicom_writer import encode_instance, series_slices
from gliomaflow.errors import (DicomError, InconsistentGeometry, MissingMagic,
                               TruncatedElement, UnsupportedTransferSyntax)

JPEG_BASELINE = "1.2.840.10008.1.2.4.50"


def _meta(**kw):
    base = dict(series_uid="1.2.3", sop_uid="1.2.3.1", series_description="AX T2",
                image_type=("ORIGINAL", "PRIMARY"), image_orientation_patient=(1, 0, 0, 0, 1, 0),
                image_position_patient=(0.0, 0.0, 0.0), pixel_spacing=(1.0, 1.0),
                series_number=3, instance_number=1)
    base.update(kw)
    return InstanceMeta(**base)


def test_roundtrip_fixtures():
    rng = np.random.default_rng(11)
    for i in range(100):
        meta, pixels, kwargs, seq = random_dicom_fixture(rng, i)
        inst = read_dicom(encode_fixture(meta, pixels, kwargs, seq))
        for name in REQUIRED_FIELDS:
            assert getattr(inst.meta, name) == getattr(meta, name), (i, name)
        assert inst.meta.transfer_syntax == kwargs["transfer_syntax"]
        # odd-length 8-bit payloads carry one pad byte
        decoded = np.frombuffer(inst.pixel_data, dtype=pixels.dtype.newbyteorder("<"),
                                count=pixels.size)
        assert np.array_equal(decoded.reshape(pixels.shape), pixels)


def test_compressed_syntax_raises():
    blob = encode_instance(_meta(), transfer_syntax=JPEG_BASELINE)
    with pytest.raises(UnsupportedTransferSyntax):
        read_dicom(blob)


def test_compressed_metadata_only_when_allowed():
    blob = encode_instance(_meta(), transfer_syntax=JPEG_BASELINE)
    inst = read_dicom(blob, allow_compressed=True)
    assert inst.meta.compressed and inst.pixel_data is None
    assert inst.meta.series_description == "AX T2"


def test_big_endian_rejected():
    with pytest.raises(UnsupportedTransferSyntax):
        read_dicom(encode_instance(_meta(), transfer_syntax=EXPLICIT_VR_BE))


def test_missing_magic():
    with pytest.raises(MissingMagic):
        read_dicom(b"\x00" * 200)


def test_no_preamble_accepted():
    blob = encode_instance(_meta(), preamble=False)
    assert read_dicom(blob).meta.series_uid == "1.2.3"


def test_truncated_element():
    blob = encode_instance(_meta(), np.zeros((4, 4), np.uint16))
    with pytest.raises(TruncatedElement):
        read_dicom(blob[:-5])


def test_encapsulated_pixels_under_native_syntax_raise():
    head = encode_instance(_meta())
    pix = struct.pack("<HH", PIXEL_DATA.group, PIXEL_DATA.element) + b"OB\x00\x00"
    pix += struct.pack("<I", 0xFFFFFFFF)
    pix += struct.pack("<HHI", 0xFFFE, 0xE000, 0) + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    with pytest.raises(UnsupportedTransferSyntax):
        read_dicom(head + pix)


def test_missing_series_uid():
    blob = encode_instance(_meta())
    # blank the series uid value in place
    tag = struct.pack("<HH", 0x0020, 0x000E)
    at = blob.find(tag)
    (n,) = struct.unpack_from("<H", blob, at + 6)
    blob = blob[:at + 8] + b" " * n + blob[at + 8 + n:]
    with pytest.raises(DicomError):
        read_dicom(blob)


def test_implicit_vr_roundtrip_and_file_object():
    blob = encode_instance(_meta(series_description="SAG FLAIR"), transfer_syntax=IMPLICIT_VR_LE)
    meta = parse_dicom_file(io.BytesIO(blob))
    assert meta.series_description == "SAG FLAIR"


def test_instance_meta_validation():
    with pytest.raises(DicomError):
        _meta(image_orientation_patient=(2, 0, 0, 0, 1, 0))
    with pytest.raises(DicomError):
        _meta(series_uid="")
    with pytest.raises(DicomError):
        _meta(rows=0)


def test_series_record_rejects_foreign_instance():
    with pytest.raises(DicomError):
        SeriesRecord("other", [_meta()])


def test_dicom_tag_str_and_range():
    assert str(DicomTag(0x0020, 0x000E)) == "(0020,000E)"
    with pytest.raises(ValueError):
        DicomTag(0x10000, 0)


def _volume_from_blobs(blobs):
    insts = [read_dicom(b) for b in blobs]
    (rec,) = assemble_series([i.meta for i in insts])
    by_sop = {i.meta.sop_uid: i.pixel_data for i in insts}
    return series_to_volume(rec, [by_sop[m.sop_uid] for m in rec.instances])


def test_series_to_volume_roundtrip_and_shuffle():
    rng = np.random.default_rng(0)
    vol = rng.integers(0, 1000, size=(6, 5, 4)).astype(np.uint16)
    blobs = series_slices(series_uid="5.5", description="AX T2", volume=vol,
                          spacing=(0.5, 0.75, 2.0), origin=(10.0, 20.0, 30.0))
    v = _volume_from_blobs(blobs[::-1])
    assert np.array_equal(v.voxels, vol)
    assert np.allclose(v.spacing, (0.5, 0.75, 2.0))
    # LPS origin (10, 20, 30) reported in RAS
    assert np.allclose(v.origin, (-10.0, -20.0, 30.0))


def test_series_to_volume_examples():
    # slices at z=0 and z=2, supplied in reverse order
    vol = np.arange(2 * 2 * 2, dtype=np.uint16).reshape(2, 2, 2)
    blobs = series_slices(series_uid="5.7", description="x", volume=vol, spacing=(1, 1, 2))
    v = _volume_from_blobs(blobs[::-1])
    assert v.spacing[2] == 2.0 and np.array_equal(v.voxels, vol)
    assert v.meta["position_fallback"] is False and v.meta["slice_spacing_uniform"] is True


def test_series_to_volume_missing_position_falls_back():
    vol = np.arange(3 * 3 * 4, dtype=np.uint16).reshape(3, 3, 4)
    insts = [read_dicom(b) for b in series_slices(series_uid="5.8", description="x",
                                                  volume=vol)]
    metas = [replace(i.meta, image_position_patient=None) for i in insts]
    (rec,) = assemble_series(metas[::-1])
    by_sop = {i.meta.sop_uid: i.pixel_data for i in insts}
    v = series_to_volume(rec, [by_sop[m.sop_uid] for m in rec.instances])
    assert v.meta["position_fallback"] is True
    # instance-number order restores the authored stack
    assert np.array_equal(v.voxels, vol)


def test_series_to_volume_non_uniform_spacing_recorded():
    insts = [read_dicom(b) for b in series_slices(series_uid="5.9", description="x",
                                                  volume=np.zeros((2, 2, 3), np.uint16))]
    z = (0.0, 1.0, 3.0)
    metas = [replace(i.meta, image_position_patient=(0.0, 0.0, zz)) for i, zz in zip(insts, z)]
    (rec,) = assemble_series(metas)
    v = series_to_volume(rec, [i.pixel_data for i in insts])
    assert v.meta["slice_spacing_uniform"] is False


def test_series_to_volume_inconsistent_sizes():
    a = series_slices(series_uid="5.6", description="x", volume=np.zeros((4, 4, 2), np.uint16))
    b = series_slices(series_uid="5.6", description="x", volume=np.zeros((3, 4, 1), np.uint16),
                      origin=(0, 0, 5))
    metas = [read_dicom(x).meta for x in a[:1] + b]
    (rec,) = assemble_series(metas)
    with pytest.raises(InconsistentGeometry):
        series_to_volume(rec, [b"\x00" * 32, b"\x00" * 24])


def test_manifest_roundtrip(tmp_path):
    from builders import make_series
    s = make_series("8.8", "AX FLAIR", 33, series_number=4)
    entry = series_manifest_entry(s)
    back = series_from_manifest_entry(entry)
    assert back.n_instances == 33 and back.description == "AX FLAIR"
    assert back.series_number == 4
    doc = session_manifest("S1", [s])
    doc["series"][0]["image"] = "img.nii"
    p = tmp_path / "m.json"
    import json
    p.write_text(json.dumps(doc))
    m = load_manifest(p)
    assert m.session_id == "S1" and m.images["8.8"] == str(tmp_path / "img.nii")


def test_read_dicom_path(tmp_path):
    p = tmp_path / "x.dcm"
    p.write_bytes(encode_instance(_meta()))
    assert read_dicom_path(p).meta.sop_uid == "1.2.3.1"
