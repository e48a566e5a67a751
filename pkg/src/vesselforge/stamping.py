"""Sphere/capsule stamping: dense unions of balls along a path.

Spheres are placed at 0.5-voxel spacing along the path so the union is a
watertight capsule at voxel resolution.
"""

from __future__ import annotations

import numpy as np

SPHERE_STEP = 0.5


def stamp_spheres(shape, centers, radii) -> np.ndarray:
    """Boolean array: union of balls (center_i, radius_i) clipped to shape."""
    out = np.zeros(tuple(shape), dtype=bool)
    dims = np.asarray(shape)
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    for center, r in zip(centers, radii):
        if r <= 0:
            continue
        lo = np.maximum(np.floor(center - r).astype(int), 0)
        hi = np.minimum(np.ceil(center + r).astype(int) + 1, dims)
        if np.any(lo >= hi):
            continue
        gx, gy, gz = np.meshgrid(*[np.arange(lo[k], hi[k]) for k in range(3)],
                                 indexing="ij")
        d2 = ((gx - center[0]) ** 2 + (gy - center[1]) ** 2
              + (gz - center[2]) ** 2)
        out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= d2 <= r * r + 1e-9
    return out


def densify_path(points, radii=None, step: float = SPHERE_STEP):
    """Resample a polyline (and per-point radii) at ``step`` arc spacing."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 1:
        r = None if radii is None else np.atleast_1d(radii).astype(float)[:1]
        return pts, r
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total == 0:
        r = None if radii is None else np.atleast_1d(radii).astype(float)[:1]
        return pts[:1], r
    n = max(int(np.ceil(total / step)), 1)
    samples = np.linspace(0.0, total, n + 1)
    out = np.empty((n + 1, 3))
    for k in range(3):
        out[:, k] = np.interp(samples, arc, pts[:, k])
    if radii is None:
        return out, None
    rr = np.broadcast_to(np.asarray(radii, dtype=float), (len(pts),))
    return out, np.interp(samples, arc, rr)


def stamp_capsule(shape, points, radii) -> np.ndarray:
    """Union of spheres along the densified path (capsule)."""
    pts, rr = densify_path(points, radii)
    if rr is None:
        rr = np.ones(len(pts))
    return stamp_spheres(shape, pts, rr)
