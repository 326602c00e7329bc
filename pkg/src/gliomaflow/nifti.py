"""Minimal single-file NIfTI-1 reader/writer.

Supports little-endian ``.nii`` files with uint8, int16 or float32 voxels.  The
sform is preferred over the qform when both are set.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import NiftiError
from .volume import Geometry, Volume3D

HEADER_SIZE = 348
VOX_OFFSET = 352

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

_DTYPES = {
    DT_UINT8: (np.dtype("<u1"), 8),
    DT_INT16: (np.dtype("<i2"), 16),
    DT_FLOAT32: (np.dtype("<f4"), 32),
}


def _quaternion_to_rotation(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])


def _rotation_to_quaternion(r: np.ndarray):
    """Quaternion (b, c, d) of a proper rotation; the real part is kept >= 0."""
    trace = r[0, 0] + r[1, 1] + r[2, 2] + 1.0
    if trace > 0.5:
        a = 0.5 * np.sqrt(trace)
        b = 0.25 * (r[2, 1] - r[1, 2]) / a
        c = 0.25 * (r[0, 2] - r[2, 0]) / a
        d = 0.25 * (r[1, 0] - r[0, 1]) / a
    else:
        xd = 1.0 + r[0, 0] - (r[1, 1] + r[2, 2])
        yd = 1.0 + r[1, 1] - (r[0, 0] + r[2, 2])
        zd = 1.0 + r[2, 2] - (r[0, 0] + r[1, 1])
        if xd > 1.0:
            b = 0.5 * np.sqrt(xd)
            c = 0.25 * (r[0, 1] + r[1, 0]) / b
            d = 0.25 * (r[0, 2] + r[2, 0]) / b
            a = 0.25 * (r[2, 1] - r[1, 2]) / b
        elif yd > 1.0:
            c = 0.5 * np.sqrt(yd)
            b = 0.25 * (r[0, 1] + r[1, 0]) / c
            d = 0.25 * (r[1, 2] + r[2, 1]) / c
            a = 0.25 * (r[0, 2] - r[2, 0]) / c
        else:
            d = 0.5 * np.sqrt(zd)
            b = 0.25 * (r[0, 2] + r[2, 0]) / d
            c = 0.25 * (r[1, 2] + r[2, 1]) / d
            a = 0.25 * (r[1, 0] - r[0, 1]) / d
        if a < 0:
            b, c, d = -b, -c, -d
    return float(b), float(c), float(d)


def _pick_dtype(vol: Volume3D) -> int:
    data = vol.voxels
    if data.dtype.kind in "biu":
        lo, hi = (int(data.min()), int(data.max())) if data.size else (0, 0)
        if 0 <= lo and hi <= 255:
            return DT_UINT8
        if -32768 <= lo and hi <= 32767:
            return DT_INT16
    return DT_FLOAT32


def encode_nifti(vol: Volume3D, description: str = "") -> bytes:
    code = _pick_dtype(vol)
    dtype, bitpix = _DTYPES[code]
    affine = vol.affine
    direction = vol.direction
    qfac = 1.0
    rot = direction.copy()
    if np.linalg.det(rot) < 0:
        qfac = -1.0
        rot[:, 2] = -rot[:, 2]
    # orthonormalise before extracting a quaternion; the sform stays exact
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    qb, qc, qd = _rotation_to_quaternion(rot)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dims = [3, *vol.dims, 1, 1, 1, 1]
    struct.pack_into("<8h", hdr, 40, *dims)
    struct.pack_into("<hh", hdr, 70, code, bitpix)
    pixdim = [qfac, *vol.spacing, 1.0, 1.0, 1.0, 1.0]
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)
    hdr[123] = 2 | 8  # mm, seconds
    desc = description.encode("ascii", "replace")[:79]
    hdr[148:148 + len(desc)] = desc
    struct.pack_into("<hh", hdr, 252, 1, 1)
    struct.pack_into("<6f", hdr, 256, qb, qc, qd, *vol.origin)
    for row in range(3):
        struct.pack_into("<4f", hdr, 280 + 16 * row, *affine[row])
    hdr[344:348] = b"n+1\x00"
    body = np.asarray(vol.voxels).astype(dtype).tobytes(order="F")
    return bytes(hdr) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + body


def decode_nifti(buf: bytes, *, is_label: bool = False) -> Volume3D:
    if len(buf) < HEADER_SIZE:
        raise NiftiError("file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", buf, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", buf, 0)[0] == HEADER_SIZE:
            raise NiftiError("big-endian NIfTI is not supported")
        raise NiftiError(f"bad sizeof_hdr {sizeof_hdr}")
    magic = bytes(buf[344:348])
    if magic != b"n+1\x00":
        raise NiftiError(f"unsupported magic {magic!r}; only single-file n+1 is handled")
    dim = struct.unpack_from("<8h", buf, 40)
    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4:ndim + 1]):
        raise NiftiError(f"expected a 3-D volume, got dim={dim}")
    dims = tuple(int(d) for d in dim[1:4])
    code, _bitpix = struct.unpack_from("<hh", buf, 70)
    if code not in _DTYPES:
        raise NiftiError(f"unsupported datatype code {code}")
    dtype = _DTYPES[code][0]
    pixdim = struct.unpack_from("<8f", buf, 76)
    (vox_offset,) = struct.unpack_from("<f", buf, 108)
    slope, inter = struct.unpack_from("<ff", buf, 112)
    qform_code, sform_code = struct.unpack_from("<hh", buf, 252)
    quat = struct.unpack_from("<6f", buf, 256)
    srows = [struct.unpack_from("<4f", buf, 280 + 16 * r) for r in range(3)]

    offset = int(vox_offset)
    count = int(np.prod(dims))
    nbytes = count * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise NiftiError("voxel data truncated")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = data.reshape(dims, order="F").astype(dtype.newbyteorder("="))
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data * (slope if slope else 1.0) + inter

    if sform_code > 0:
        affine = np.eye(4)
        affine[:3] = np.asarray(srows, dtype=float)
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        rot = _quaternion_to_rotation(*quat[:3])
        scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
        affine = np.eye(4)
        affine[:3, :3] = rot * scale[None, :]
        affine[:3, 3] = quat[3:]
    else:
        affine = np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0, 1.0])
    geom = Geometry.from_affine(dims, affine)
    return Volume3D.on_geometry(np.ascontiguousarray(data), geom, is_label=is_label)


def read_nifti(path: Union[str, Path], *, is_label: bool = False) -> Volume3D:
    path = Path(path)
    if path.suffix == ".gz":
        raise NiftiError("gzip-compressed NIfTI is not supported")
    vol = decode_nifti(path.read_bytes(), is_label=is_label)
    return vol.with_voxels(vol.voxels, source=str(path))


def write_nifti(vol: Volume3D, path: Union[str, Path], description: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_nifti(vol, description))
    return path
