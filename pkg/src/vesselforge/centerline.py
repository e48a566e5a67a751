"""Centerline graphs: construction from raw points or masks, geodesic
percentile spans, tangents/radii, and cylinder-union span masks.

All produced centerlines are simple paths ordered proximal -> distal.
Percentile fractions use unit edge weights on the node graph, so node i of
an N-node path sits at fraction i/(N-1) from the proximal endpoint.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateCenterlineError,
    EmptySpanError,
    NotTubularError,
    SpanMissesMaskError,
)
from .volume import BinaryMask, LabelVolume, distance_transform


@dataclass
class RefineConfig:
    connect_radius: float = 1.7320508075688772 + 1e-6  # sqrt(3): 26-neighborhood
    spur_len: int = 5
    resample_spacing: float = 1.0


@dataclass
class Centerline:
    segment_id: int
    nodes: np.ndarray                # (N, 3) float voxel coordinates
    edges: list = field(default_factory=list)
    anchor_proximal: int = 0
    fractions: np.ndarray | None = None
    tangents: np.ndarray | None = None
    radii: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        if not self.edges and len(self.nodes) > 1:
            self.edges = [(i, i + 1) for i in range(len(self.nodes) - 1)]
        if self.fractions is None:
            n = len(self.nodes)
            self.fractions = (np.arange(n) / max(n - 1, 1)).astype(float)
        if self.tangents is None:
            self.tangents = _path_tangents(self.nodes)
        if self.radii is None:
            self.radii = np.ones(len(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def endpoints(self) -> list[int]:
        deg = {}
        for i, j in self.edges:
            deg[i] = deg.get(i, 0) + 1
            deg[j] = deg.get(j, 0) + 1
        if not deg:
            return [0] if len(self.nodes) else []
        return sorted(i for i, d in deg.items() if d == 1)

    def geodesic_length(self) -> float:
        return float(sum(
            np.linalg.norm(self.nodes[i] - self.nodes[j]) for i, j in self.edges))

    def fraction_from(self, anchor: str) -> np.ndarray:
        if anchor == "proximal":
            return self.fractions
        if anchor == "distal":
            return 1.0 - self.fractions
        raise ValueError(f"anchor must be proximal or distal, got {anchor!r}")

    def reversed(self) -> "Centerline":
        n = len(self.nodes)
        return Centerline(
            self.segment_id,
            self.nodes[::-1].copy(),
            [(n - 1 - j, n - 1 - i) for i, j in self.edges],
            anchor_proximal=0,
            fractions=(1.0 - self.fractions)[::-1].copy(),
            tangents=(-self.tangents[::-1]).copy(),
            radii=self.radii[::-1].copy(),
        )

    def to_json(self) -> str:
        return json.dumps({
            "segment_id": self.segment_id,
            "nodes": [[round(float(x), 6) for x in p] for p in self.nodes],
            "edges": [[int(i), int(j)] for i, j in self.edges],
            "proximal": int(self.anchor_proximal),
        })

    @classmethod
    def from_json(cls, text: str, mask: BinaryMask | None = None) -> "Centerline":
        d = json.loads(text)
        c = cls(int(d["segment_id"]), np.asarray(d["nodes"], dtype=float),
                [(int(i), int(j)) for i, j in d.get("edges", [])],
                anchor_proximal=int(d.get("proximal", 0)))
        if mask is not None:
            c.radii = _radii_along(mask, c.nodes)
        return c


def _path_tangents(nodes: np.ndarray) -> np.ndarray:
    n = len(nodes)
    t = np.zeros((n, 3))
    if n == 1:
        t[0] = (1.0, 0.0, 0.0)
        return t
    t[0] = nodes[1] - nodes[0]
    t[-1] = nodes[-1] - nodes[-2]
    if n > 2:
        t[1:-1] = nodes[2:] - nodes[:-2]
    norms = np.linalg.norm(t, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return t / norms


def _radii_along(mask: BinaryMask, nodes: np.ndarray,
                 smooth: int = 7) -> np.ndarray:
    """Sub-voxel per-node tube radii. The nearest boundary-adjacent
    background voxel bounds the radius from above and the farthest mask
    voxel around each node bounds it from below; the midpoint is unbiased
    to half a lattice step. Radii vary slowly along a vessel, so a short
    moving average suppresses per-node lattice noise."""
    from scipy import ndimage

    from .stamping import densify_path

    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    seg = mask.bits
    shell = ~seg & ndimage.binary_dilation(seg)
    bg = np.argwhere(shell).astype(float)
    if len(bg):
        upper, _ = cKDTree(bg).query(nodes)
    else:
        upper = np.full(len(nodes), max(seg.shape) / 2.0)
    dense, _ = densify_path(nodes, None, step=0.5)
    lower = np.zeros(len(nodes))
    vox = np.argwhere(seg).astype(float)
    if len(vox):
        d, j = cKDTree(dense).query(vox)
        # dense samples are uniform in arc length, as are the nodes
        scale = (len(nodes) - 1) / max(len(dense) - 1, 1)
        node_of = np.minimum(np.round(j * scale).astype(int), len(nodes) - 1)
        np.maximum.at(lower, node_of, d)
    lower = np.where(lower > 0, lower, np.maximum(upper - 0.5, 0.25))
    lower = np.minimum(lower, upper)  # guard against bin spill-over
    radii = 0.5 * (lower + upper)
    if smooth > 1 and len(radii) > 2:
        radii = ndimage.uniform_filter1d(radii, size=smooth, mode="nearest")
    return radii


def local_tangent(c: Centerline, index: int) -> np.ndarray:
    return c.tangents[index]


def estimate_radius(mask: BinaryMask, point) -> float:
    """Distance-transform value at the voxel nearest to the point."""
    idx = np.clip(np.rint(np.asarray(point, dtype=float)).astype(int),
                  0, np.asarray(mask.dims) - 1)
    if not mask.bits[idx[0], idx[1], idx[2]]:
        raise ValueError(f"point {tuple(point)} is outside the mask")
    dt = distance_transform(mask)
    return float(dt[idx[0], idx[1], idx[2]])


# ---------------------------------------------------------------------------
# construction

def refine_centerline(raw_points, mask: BinaryMask,
                      cfg: RefineConfig | None = None,
                      segment_id: int = 0,
                      proximal_hint=None) -> Centerline:
    """Turn a raw point cloud into a pruned, uniformly resampled path.

    Pipeline: dedup -> connect pairs within the 26-neighborhood radius with
    unit edge weights -> keep the largest component -> prune leaf branches
    shorter than ``spur_len`` nodes -> extract the longest geodesic path ->
    resample at uniform arc spacing -> snap off-mask nodes to the nearest
    in-mask voxel center.
    """
    cfg = cfg or RefineConfig()
    if mask.is_empty():
        raise DegenerateCenterlineError("mask is empty")
    pts = np.unique(np.asarray(raw_points, dtype=float).reshape(-1, 3), axis=0)
    if len(pts) == 0:
        raise DegenerateCenterlineError("no raw points")
    adj = _build_adjacency(pts, cfg.connect_radius)
    keep = _largest_component(adj)
    keep = _prune_spurs(adj, keep, cfg.spur_len)
    if len(keep) < 2:
        raise DegenerateCenterlineError(
            "pruning left fewer than 2 connected points")
    path_idx = _longest_path(adj, keep)
    if len(path_idx) < 2:
        raise DegenerateCenterlineError("no path through the point graph")
    poly = pts[path_idx]
    poly = _resample_polyline(poly, cfg.resample_spacing)
    poly = _snap_to_mask(poly, mask)
    c = Centerline(segment_id, poly)
    c.radii = _radii_along(mask, c.nodes)
    _orient_proximal(c, proximal_hint)
    return c


def skeletonize(mask: BinaryMask, cfg: RefineConfig | None = None,
                segment_id: int = 0, proximal_hint=None) -> Centerline:
    """Extract a path centerline from a tubular mask via its medial skeleton."""
    from skimage.morphology import skeletonize as _sk3d

    if mask.is_empty():
        raise NotTubularError("mask is empty")
    if mask.popcount() < 3:
        raise NotTubularError("mask too small to be tubular")
    skel = _sk3d(mask.bits)
    pts = np.argwhere(skel).astype(float)
    if len(pts) < 2:
        raise NotTubularError("skeleton collapsed to fewer than 2 voxels")
    try:
        return refine_centerline(pts, mask, cfg, segment_id, proximal_hint)
    except DegenerateCenterlineError as e:
        raise NotTubularError(str(e)) from e


def _build_adjacency(pts: np.ndarray, radius: float) -> list[list[int]]:
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    adj: list[list[int]] = [[] for _ in range(len(pts))]
    for i, j in pairs:
        adj[i].append(int(j))
        adj[j].append(int(i))
    return adj


def _largest_component(adj) -> set[int]:
    n = len(adj)
    seen = [False] * n
    best: list[int] = []
    for s in range(n):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    q.append(v)
        if len(comp) > len(best):
            best = comp
    return set(best)


def _prune_spurs(adj, keep: set[int], spur_len: int) -> set[int]:
    keep = set(keep)
    while True:
        deg = {u: sum(1 for v in adj[u] if v in keep) for u in keep}
        removed = False
        for leaf in sorted(u for u in keep if deg[u] == 1):
            if leaf not in keep:
                continue
            # walk from the leaf to the first junction
            branch = [leaf]
            prev, cur = None, leaf
            while True:
                nbrs = [v for v in adj[cur] if v in keep and v != prev]
                if len(nbrs) != 1:
                    break
                prev, cur = cur, nbrs[0]
                if sum(1 for v in adj[cur] if v in keep) > 2:
                    break
                branch.append(cur)
            junction_next = [v for v in adj[branch[-1]]
                             if v in keep and v not in branch]
            is_spur = any(
                sum(1 for w in adj[v] if w in keep) > 2 for v in junction_next)
            if is_spur and len(branch) < spur_len:
                keep -= set(branch)
                removed = True
        if not removed:
            return keep


def _bfs_far(adj, keep: set[int], start: int):
    dist = {start: 0}
    par = {start: None}
    q = deque([start])
    far = start
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v in keep and v not in dist:
                dist[v] = dist[u] + 1
                par[v] = u
                q.append(v)
                if dist[v] > dist[far] or (dist[v] == dist[far] and v < far):
                    far = v
    return far, par


def _longest_path(adj, keep: set[int]) -> list[int]:
    start = min(keep)
    a, _ = _bfs_far(adj, keep, start)
    b, par = _bfs_far(adj, keep, a)
    path = [b]
    while par[path[-1]] is not None:
        path.append(par[path[-1]])
    return path[::-1]


def _resample_polyline(poly: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total == 0:
        return poly[:1]
    n = max(int(round(total / spacing)), 1)
    samples = np.linspace(0.0, total, n + 1)
    out = np.empty((n + 1, 3))
    for k in range(3):
        out[:, k] = np.interp(samples, arc, poly[:, k])
    return out


def _snap_to_mask(poly: np.ndarray, mask: BinaryMask) -> np.ndarray:
    dims = np.asarray(mask.dims)
    idx = np.clip(np.rint(poly).astype(int), 0, dims - 1)
    inside = mask.bits[idx[:, 0], idx[:, 1], idx[:, 2]]
    if inside.all():
        return poly
    in_vox = np.argwhere(mask.bits).astype(float)
    tree = cKDTree(in_vox)
    out = poly.copy()
    _, nearest = tree.query(poly[~inside])
    out[~inside] = in_vox[nearest]
    return out


def _orient_proximal(c: Centerline, proximal_hint) -> None:
    """Flip the path so node 0 is the proximal endpoint.

    ``proximal_hint`` may be a 3-point, a BinaryMask of the parent segment,
    or None (lexicographically smaller endpoint coordinate wins).
    """
    first, last = c.nodes[0], c.nodes[-1]
    if proximal_hint is None:
        flip = tuple(last) < tuple(first)
    elif isinstance(proximal_hint, BinaryMask):
        if proximal_hint.is_empty():
            flip = tuple(last) < tuple(first)
        else:
            vox = np.argwhere(proximal_hint.bits).astype(float)
            tree = cKDTree(vox)
            flip = tree.query(last)[0] < tree.query(first)[0]
    else:
        p = np.asarray(proximal_hint, dtype=float)
        flip = np.linalg.norm(last - p) < np.linalg.norm(first - p)
    if flip:
        flipped = c.reversed()
        c.nodes = flipped.nodes
        c.edges = flipped.edges
        c.fractions = flipped.fractions
        c.tangents = flipped.tangents
        c.radii = flipped.radii
    c.anchor_proximal = 0


# ---------------------------------------------------------------------------
# spans

def select_span(c: Centerline, p_lo: float, p_hi: float,
                anchor: str = "proximal") -> np.ndarray:
    """Node indices whose geodesic fraction from the anchor is in
    [p_lo/100, p_hi/100], boundaries inclusive."""
    if not (0 <= p_lo < p_hi <= 100):
        raise ValueError(f"invalid span ({p_lo}, {p_hi})")
    f = c.fraction_from(anchor)
    eps = 1e-9
    sel = np.flatnonzero((f >= p_lo / 100.0 - eps) & (f <= p_hi / 100.0 + eps))
    if len(sel) == 0:
        raise EmptySpanError(f"span {p_lo}-{p_hi}% from {anchor} selects no nodes")
    return sel


def cylinder_union(c: Centerline, span, dims,
                   radius_margin: float = 1.5,
                   height_margin: float = 1.5) -> np.ndarray:
    """Union of per-node finite cylinders (axis = tangent), unclipped.

    Cylinder radius = node radius x radius_margin (floor 1 voxel);
    half-height = local node spacing x height_margin.
    """
    out = np.zeros(tuple(dims), dtype=bool)
    nodes = c.nodes
    for i in np.atleast_1d(span):
        center = nodes[i]
        t = c.tangents[i]
        r = max(float(c.radii[i]), 1.0) * radius_margin
        if i + 1 < len(nodes):
            local = float(np.linalg.norm(nodes[i + 1] - nodes[i]))
        elif i > 0:
            local = float(np.linalg.norm(nodes[i] - nodes[i - 1]))
        else:
            local = 1.0
        h = max(local, 1.0) * height_margin
        _stamp_cylinder(out, center, t, r, h)
    return out


def _stamp_cylinder(out: np.ndarray, center, axis, radius, half_height):
    dims = np.asarray(out.shape)
    reach = int(np.ceil(np.sqrt(radius * radius + half_height * half_height))) + 1
    lo = np.maximum(np.floor(center - reach).astype(int), 0)
    hi = np.minimum(np.ceil(center + reach).astype(int) + 1, dims)
    if np.any(lo >= hi):
        return
    gx, gy, gz = np.meshgrid(*[np.arange(lo[k], hi[k]) for k in range(3)],
                             indexing="ij")
    d = np.stack([gx, gy, gz], axis=-1).astype(float) - center
    along = d @ axis
    perp2 = np.einsum("...k,...k->...", d, d) - along * along
    hit = (np.abs(along) <= half_height) & (perp2 <= radius * radius + 1e-9)
    out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= hit


def span_mask(v: LabelVolume, c: Centerline, span,
              radius_margin: float = 1.5,
              height_margin: float = 1.5) -> BinaryMask:
    """Cylinder union intersected with the segment's class mask."""
    if len(np.atleast_1d(span)) == 0:
        raise EmptySpanError("empty span")
    if radius_margin < 1.0:
        raise ValueError("radius_margin must be >= 1")
    seg = v.class_mask(c.segment_id)
    cyl = cylinder_union(c, span, v.dims, radius_margin, height_margin)
    bits = cyl & seg.bits
    if not bits.any():
        raise SpanMissesMaskError(
            f"span misses mask for segment {c.segment_id}")
    return seg.with_bits(bits)
