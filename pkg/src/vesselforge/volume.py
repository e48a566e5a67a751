"""Multi-class 3D label volumes and the binary morphology primitives.

Arrays are indexed ``[x, y, z]`` with the volume in canonical R-A-S
orientation after load. Morphology uses discrete Euclidean balls in voxel
units; out-of-bounds voxels count as background for erosion and dilation
simply clips at the grid boundary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import UnknownLabelError, VolumeIOError
from .labels import DEFAULT_LABEL_MAP


@dataclass(frozen=True)
class StructuringElement:
    """Discrete Euclidean ball: all integer offsets with norm <= radius."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("structuring element radius must be positive")

    @property
    def offsets(self) -> np.ndarray:
        r = int(np.floor(self.radius))
        ax = np.arange(-r, r + 1)
        dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
        keep = dx * dx + dy * dy + dz * dz <= self.radius * self.radius + 1e-12
        return np.stack([dx[keep], dy[keep], dz[keep]], axis=1)

    @property
    def footprint(self) -> np.ndarray:
        """Boolean (2r+1)^3 array for scipy binary morphology."""
        r = int(np.floor(self.radius))
        ax = np.arange(-r, r + 1)
        dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
        return dx * dx + dy * dy + dz * dz <= self.radius * self.radius + 1e-12


@dataclass(frozen=True)
class BinaryMask:
    """One boolean per voxel, sharing dims/spacing with its parent volume."""

    bits: np.ndarray  # bool, shape = dims
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    orientation: str = "RAS"

    def __post_init__(self):
        object.__setattr__(self, "bits", np.ascontiguousarray(self.bits, dtype=bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bits.shape

    def popcount(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def indices(self) -> np.ndarray:
        """(N, 3) integer voxel indices of set bits, in C order."""
        return np.argwhere(self.bits)

    def with_bits(self, bits: np.ndarray) -> "BinaryMask":
        return BinaryMask(bits, self.spacing, self.orientation)


@dataclass
class LabelVolume:
    """Dense multi-class label grid with spacing and a class-name map."""

    labels: np.ndarray  # small unsigned ints, shape (nx, ny, nz)
    spacing: tuple[float, float, float]
    label_map: dict[int, str] = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))
    orientation: str = "RAS"

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 3:
            raise ValueError("labels must be a 3D array")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be strictly positive")
        present = set(np.unique(self.labels).tolist()) - {0}
        unknown = present - set(self.label_map)
        if unknown:
            raise UnknownLabelError(unknown)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def class_mask(self, class_id: int) -> BinaryMask:
        if class_id not in self.label_map:
            raise UnknownLabelError([class_id])
        return BinaryMask(self.labels == class_id, self.spacing, self.orientation)

    def foreground_mask(self) -> BinaryMask:
        return BinaryMask(self.labels != 0, self.spacing, self.orientation)

    def with_labels(self, labels: np.ndarray) -> "LabelVolume":
        return LabelVolume(labels, self.spacing, dict(self.label_map), self.orientation)

    def copy(self) -> "LabelVolume":
        return self.with_labels(self.labels.copy())

    def content_hash(self) -> str:
        """256-bit digest over dims + label bytes."""
        h = hashlib.blake2b(digest_size=32)
        h.update(np.asarray(self.dims, dtype=np.int64).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()

    def voxel_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}

    def equals(self, other: "LabelVolume") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and bool(np.array_equal(self.labels, other.labels))
        )


# ---------------------------------------------------------------------------
# morphology

_CROSS = ndimage.generate_binary_structure(3, 1)


def dilate(m: BinaryMask, se: StructuringElement) -> BinaryMask:
    out = ndimage.binary_dilation(m.bits, structure=se.footprint)
    return m.with_bits(out)


def erode(m: BinaryMask, se: StructuringElement) -> BinaryMask:
    # border_value=0: out-of-bounds treated as background
    out = ndimage.binary_erosion(m.bits, structure=se.footprint, border_value=0)
    return m.with_bits(out)


def connected_components(m: BinaryMask, connectivity: int = 26) -> list[BinaryMask]:
    """Components ordered by minimum C-order linear index (deterministic)."""
    if connectivity == 6:
        structure = ndimage.generate_binary_structure(3, 1)
    elif connectivity == 26:
        structure = ndimage.generate_binary_structure(3, 3)
    else:
        raise ValueError("connectivity must be 6 or 26")
    lab, n = ndimage.label(m.bits, structure=structure)
    flat = lab.ravel()
    first = {}
    for idx in np.flatnonzero(flat):
        c = flat[idx]
        if c not in first:
            first[c] = idx
            if len(first) == n:
                break
    order = sorted(first, key=first.get)
    return [m.with_bits(lab == c) for c in order]


def component_count(m: BinaryMask, connectivity: int = 26) -> int:
    if connectivity == 6:
        structure = ndimage.generate_binary_structure(3, 1)
    else:
        structure = ndimage.generate_binary_structure(3, 3)
    _, n = ndimage.label(m.bits, structure=structure)
    return int(n)


def surface_voxels(m: BinaryMask) -> np.ndarray:
    """(N, 3) integer indices of voxels with >= 1 six-neighbor outside."""
    interior = ndimage.binary_erosion(m.bits, structure=_CROSS, border_value=0)
    return np.argwhere(m.bits & ~interior)


def surface_points(m: BinaryMask) -> np.ndarray:
    """Surface voxel centers in millimeters (indices scaled by spacing)."""
    idx = surface_voxels(m)
    return idx.astype(float) * np.asarray(m.spacing)


def distance_transform(m: BinaryMask) -> np.ndarray:
    """Euclidean distance to the nearest background voxel, in voxels.

    Out-of-bounds counts as background, so a voxel on the grid boundary
    is at distance 1 even inside a solid mask.
    """
    padded = np.pad(m.bits, 1, constant_values=False)
    dt = ndimage.distance_transform_edt(padded)
    return dt[1:-1, 1:-1, 1:-1]


# ---------------------------------------------------------------------------
# I/O

def _rawl_paths(path: Path) -> tuple[Path, Path]:
    s = str(path)
    if s.endswith(".rawl.json"):
        base = s[: -len(".rawl.json")]
    elif s.endswith(".rawl.bin"):
        base = s[: -len(".rawl.bin")]
    else:
        base = s
    return Path(base + ".rawl.json"), Path(base + ".rawl.bin")


def save_volume(v: LabelVolume, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "rawl":
        header_path, bin_path = _rawl_paths(path)
        header = {
            "dims": list(v.dims),
            "spacing": list(v.spacing),
            "orientation": v.orientation,
            "dtype": "u8",
            "label_map": {str(k): name for k, name in sorted(v.label_map.items())},
        }
        header_path.write_text(json.dumps(header, indent=2))
        # row-major with x fastest: z is the slowest axis in the byte stream
        bin_path.write_bytes(v.labels.transpose(2, 1, 0).tobytes())
    elif fmt == "nifti":
        from . import nifti

        nifti.write_nifti(path, v)
    else:
        raise VolumeIOError(f"unknown format: {fmt}")


def load_volume(path, format: str | None = None,
                label_map: dict[int, str] | None = None) -> LabelVolume:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "rawl":
        header_path, bin_path = _rawl_paths(path)
        if not header_path.exists() or not bin_path.exists():
            raise VolumeIOError(f"missing rawl pair for {path}")
        try:
            header = json.loads(header_path.read_text())
            dims = tuple(int(d) for d in header["dims"])
            spacing = tuple(float(s) for s in header["spacing"])
            if header.get("dtype", "u8") != "u8":
                raise VolumeIOError(f"unsupported rawl dtype {header.get('dtype')}")
            raw = np.frombuffer(bin_path.read_bytes(), dtype=np.uint8)
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise VolumeIOError(f"malformed rawl header {header_path}: {e}") from e
        if raw.size != dims[0] * dims[1] * dims[2]:
            raise VolumeIOError(
                f"rawl payload has {raw.size} bytes, expected {np.prod(dims)}")
        labels = raw.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
        lmap = label_map or {int(k): str(n) for k, n in header.get("label_map", {}).items()}
        if not lmap:
            lmap = dict(DEFAULT_LABEL_MAP)
        return LabelVolume(labels, spacing, lmap, header.get("orientation", "RAS"))
    elif fmt == "nifti":
        from . import nifti

        labels, spacing = nifti.read_nifti(path)
        return LabelVolume(labels, spacing, label_map or dict(DEFAULT_LABEL_MAP))
    else:
        raise VolumeIOError(f"unknown format: {fmt}")


def load_volume_bytes(header_json: bytes, body: bytes,
                      label_map: dict[int, str] | None = None) -> LabelVolume:
    """Decode an in-memory rawl pair (service upload path)."""
    try:
        header = json.loads(header_json)
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
        raw = np.frombuffer(body, dtype=np.uint8)
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        raise VolumeIOError(f"malformed rawl upload: {e}") from e
    if raw.size != dims[0] * dims[1] * dims[2]:
        raise VolumeIOError("rawl upload size mismatch")
    labels = raw.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    lmap = label_map or {int(k): str(n) for k, n in header.get("label_map", {}).items()}
    if not lmap:
        lmap = dict(DEFAULT_LABEL_MAP)
    return LabelVolume(labels, spacing, lmap, header.get("orientation", "RAS"))


def _infer_format(path: Path) -> str:
    s = str(path)
    if s.endswith(".nii") or s.endswith(".nii.gz"):
        return "nifti"
    return "rawl"
