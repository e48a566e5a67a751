"""Synthetic tube phantoms: straight, oblique, L-shaped, S-curve, helix.

Each generator returns a single-segment LabelVolume plus the analytic
centerline used to stamp it, so tests have exact ground truth geometry.
"""

from __future__ import annotations

import numpy as np

from .centerline import Centerline, _radii_along
from .labels import DEFAULT_LABEL_MAP
from .stamping import stamp_capsule
from .volume import LabelVolume


def tube_from_path(path_points, radius: float, class_id: int = 7,
                   margin: int = 4, label_map=None) -> tuple[LabelVolume, Centerline]:
    """Stamp a constant-radius capsule along a path into a fresh volume."""
    pts = np.asarray(path_points, dtype=float).reshape(-1, 3)
    lo = np.floor(pts.min(axis=0) - radius - margin)
    # sub-voxel shift keeps axis-parallel paths off the exact lattice, like
    # any real scan; exact alignment makes radius measurements degenerate
    pts = pts - lo + np.array([0.37, 0.23, 0.41])
    dims = tuple(int(np.ceil(x)) for x in (pts.max(axis=0) + radius + margin + 1))
    bits = stamp_capsule(dims, pts, radius)
    labels = np.zeros(dims, dtype=np.uint8)
    labels[bits] = class_id
    vol = LabelVolume(labels, (1.0, 1.0, 1.0),
                      dict(label_map or DEFAULT_LABEL_MAP))
    c = _analytic_centerline(pts, class_id, vol)
    return vol, c


def _analytic_centerline(pts: np.ndarray, class_id: int,
                         vol: LabelVolume) -> Centerline:
    # resample to 1-voxel node spacing so unit-weight fractions track arclength
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(round(arc[-1])), 1)
    samples = np.linspace(0.0, arc[-1], n + 1)
    nodes = np.empty((n + 1, 3))
    for k in range(3):
        nodes[:, k] = np.interp(samples, arc, pts[:, k])
    c = Centerline(class_id, nodes)
    c.radii = _radii_along(vol.class_mask(class_id), nodes)
    return c


def straight_tube(length: int = 60, radius: float = 3.0,
                  class_id: int = 7) -> tuple[LabelVolume, Centerline]:
    path = [(0.0, 0.0, 0.0), (float(length), 0.0, 0.0)]
    return tube_from_path(path, radius, class_id)


def oblique_tube(length: int = 60, radius: float = 3.0,
                 class_id: int = 7) -> tuple[LabelVolume, Centerline]:
    d = np.array([2.0, 1.0, 1.0])
    d /= np.linalg.norm(d)
    path = [(0.0, 0.0, 0.0), tuple(d * length)]
    return tube_from_path(path, radius, class_id)


def l_tube(arm: int = 30, radius: float = 3.0,
           class_id: int = 7) -> tuple[LabelVolume, Centerline]:
    path = [(0.0, 0.0, 0.0), (float(arm), 0.0, 0.0), (float(arm), float(arm), 0.0)]
    return tube_from_path(path, radius, class_id)


def s_tube(length: int = 60, radius: float = 3.0, amplitude: float = 8.0,
           class_id: int = 7) -> tuple[LabelVolume, Centerline]:
    t = np.linspace(0.0, 1.0, 200)
    path = np.stack([
        t * length,
        amplitude * np.sin(2 * np.pi * t),
        np.zeros_like(t),
    ], axis=1)
    return tube_from_path(path, radius, class_id)


def helix_tube(length: int = 50, radius: float = 2.5, coil_radius: float = 8.0,
               turns: float = 1.5, class_id: int = 7) -> tuple[LabelVolume, Centerline]:
    t = np.linspace(0.0, 1.0, 300)
    path = np.stack([
        t * length,
        coil_radius * np.cos(2 * np.pi * turns * t),
        coil_radius * np.sin(2 * np.pi * turns * t),
    ], axis=1)
    return tube_from_path(path, radius, class_id)


PHANTOM_BUILDERS = {
    "straight": straight_tube,
    "oblique": oblique_tube,
    "l_shaped": l_tube,
    "s_curve": s_tube,
    "helix": helix_tube,
}


def make_phantom(name: str, radius: float = 3.0,
                 class_id: int = 7) -> tuple[LabelVolume, Centerline]:
    return PHANTOM_BUILDERS[name](radius=radius, class_id=class_id)


def multi_segment_phantom(label_map=None) -> tuple[LabelVolume, dict[int, Centerline]]:
    """13 parallel straight tubes, one per CoW class, in one volume."""
    label_map = dict(label_map or DEFAULT_LABEL_MAP)
    ids = sorted(label_map)
    # pitch leaves room for both neighbors thickening to 2x radius
    length, radius, pitch, margin = 48, 2.5, 13, 6
    dims = (length + 2 * margin, pitch * len(ids) + 2 * margin, 2 * margin + 6)
    labels = np.zeros(dims, dtype=np.uint8)
    centerlines: dict[int, Centerline] = {}
    for k, cid in enumerate(ids):
        y = margin + pitch * k + 2
        z = margin + 2
        path = np.array([[margin, y, z], [margin + length, y, z]], dtype=float)
        bits = stamp_capsule(dims, path, radius)
        labels[bits & (labels == 0)] = cid
    vol = LabelVolume(labels, (1.0, 1.0, 1.0), label_map)
    for k, cid in enumerate(ids):
        y = margin + pitch * k + 2
        z = margin + 2
        path = np.array([[margin, y, z], [margin + length, y, z]], dtype=float)
        centerlines[cid] = _analytic_centerline(path, cid, vol)
    return vol, centerlines
