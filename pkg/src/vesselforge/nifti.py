"""Minimal NIfTI-1 reader/writer for integer label volumes.

Only single-file .nii / .nii.gz with integer datatypes. The affine is used
solely to derive voxel spacing and the axis permutation/flips that bring the
data to R-A-S; no resampling.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import VolumeIOError

_HDR_SIZE = 348
_VOX_OFFSET = 352.0

# NIfTI datatype code -> numpy dtype (integer types only)
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
    1024: np.int64,
    1280: np.uint64,
}


def _read_bytes(path: Path) -> bytes:
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Return (labels indexed [x,y,z] in RAS, spacing in mm)."""
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"no such file: {path}")
    data = _read_bytes(path)
    if len(data) < _HDR_SIZE:
        raise VolumeIOError("truncated NIfTI header")
    sizeof_hdr = struct.unpack_from("<i", data, 0)[0]
    endian = "<"
    if sizeof_hdr != _HDR_SIZE:
        endian = ">"
        if struct.unpack_from(">i", data, 0)[0] != _HDR_SIZE:
            raise VolumeIOError("not a NIfTI-1 file")
    magic = data[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeIOError("bad NIfTI magic")
    dim = struct.unpack_from(endian + "8h", data, 40)
    if dim[0] < 3:
        raise VolumeIOError("NIfTI volume must be 3D")
    nx, ny, nz = dim[1], dim[2], dim[3]
    datatype = struct.unpack_from(endian + "h", data, 70)[0]
    if datatype not in _DTYPES:
        raise VolumeIOError(f"non-integer NIfTI datatype {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)
    pixdim = struct.unpack_from(endian + "8f", data, 76)
    vox_offset = struct.unpack_from(endian + "f", data, 108)[0]
    sform_code = struct.unpack_from(endian + "h", data, 254)[0]
    qform_code = struct.unpack_from(endian + "h", data, 252)[0]

    if sform_code > 0:
        srow = struct.unpack_from(endian + "12f", data, 280)
        rot = np.array(srow, dtype=float).reshape(3, 4)[:, :3]
    elif qform_code > 0:
        rot = _quaternion_rotation(data, endian) * np.array(
            [pixdim[1], pixdim[2], pixdim[3]])
    else:
        rot = np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0])

    n = nx * ny * nz
    body = np.frombuffer(data, dtype=dtype, count=n, offset=int(vox_offset))
    # NIfTI stores x fastest
    arr = body.reshape(nz, ny, nx).transpose(2, 1, 0)

    arr, spacing = _to_ras(arr, rot)
    if arr.min() < 0:
        raise VolumeIOError("negative label values in NIfTI data")
    return arr.astype(np.uint8), spacing


def _quaternion_rotation(data: bytes, endian: str) -> np.ndarray:
    b, c, d = struct.unpack_from(endian + "3f", data, 256)
    a = float(np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d))))
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])


def _to_ras(arr: np.ndarray, rot: np.ndarray):
    """Permute/flip axes so voxel axes align with +R, +A, +S."""
    spacing_in = np.linalg.norm(rot, axis=0)
    spacing_in[spacing_in == 0] = 1.0
    dirs = rot / spacing_in
    perm = [0, 0, 0]
    flip = [False, False, False]
    used = set()
    for vox_axis in range(3):
        world = int(np.argmax(np.abs(dirs[:, vox_axis])))
        if world in used:
            raise VolumeIOError("degenerate NIfTI affine")
        used.add(world)
        perm[world] = vox_axis
        flip[world] = dirs[world, vox_axis] < 0
    out = arr.transpose(perm)
    for axis in range(3):
        if flip[axis]:
            out = np.flip(out, axis=axis)
    spacing = tuple(float(spacing_in[perm[i]]) for i in range(3))
    return np.ascontiguousarray(out), spacing


def write_nifti(path, volume) -> None:
    """Write a LabelVolume as uint8 RAS NIfTI-1 (.nii or .nii.gz)."""
    path = Path(path)
    v = volume
    nx, ny, nz = v.dims
    sx, sy, sz = v.spacing
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    hdr[39] = ord("r")  # dim_info unused; regular flag
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 2)  # uint8
    struct.pack_into("<h", hdr, 72, 8)  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, _VOX_OFFSET)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    struct.pack_into("<12f", hdr, 280,
                     sx, 0.0, 0.0, 0.0,
                     0.0, sy, 0.0, 0.0,
                     0.0, 0.0, sz, 0.0)
    hdr[344:348] = b"n+1\x00"
    body = v.labels.transpose(2, 1, 0).tobytes()
    payload = bytes(hdr) + b"\x00\x00\x00\x00" + body
    if str(path).endswith(".gz"):
        path.write_bytes(gzip.compress(payload, mtime=0))
    else:
        path.write_bytes(payload)
