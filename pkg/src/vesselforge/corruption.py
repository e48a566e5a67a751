"""Parameterized segment error operators and dataset synthesis.

Error kinds: GlobalThicken, GlobalThin, MissingSegment, LocalThicken,
LocalThin, Shorten, Disconnect, Fragment. Thickness kinds restamp the tube
with per-node radii scaled by the factor, so fractional radius changes are
realized exactly. Removal kinds delete the segment voxels
whose nearest centerline node falls in the target percentile interval, which
is the dense-cylinder construction in the limit and leaves crumb-free cuts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .centerline import Centerline
from .errors import VesselForgeError
from .stamping import densify_path, stamp_spheres
from .volume import LabelVolume, BinaryMask, save_volume, distance_transform

GLOBAL_THICKEN = "GlobalThicken"
GLOBAL_THIN = "GlobalThin"
MISSING_SEGMENT = "MissingSegment"
LOCAL_THICKEN = "LocalThicken"
LOCAL_THIN = "LocalThin"
SHORTEN = "Shorten"
DISCONNECT = "Disconnect"
FRAGMENT = "Fragment"

ALL_KINDS = [GLOBAL_THICKEN, GLOBAL_THIN, MISSING_SEGMENT, LOCAL_THICKEN,
             LOCAL_THIN, SHORTEN, DISCONNECT, FRAGMENT]
# kinds carrying numeric parameters (MissingSegment has none)
PARAMETERIZED_KINDS = [k for k in ALL_KINDS if k != MISSING_SEGMENT]
SPAN_KINDS = {LOCAL_THICKEN, LOCAL_THIN, SHORTEN, DISCONNECT, FRAGMENT}


@dataclass
class EditRecord:
    kind: str
    segment_id: int
    span: tuple[float, float] | None = None
    anchor: str | None = None
    magnitude: float | None = None
    fragment_count: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}")
        if self.span is not None:
            lo, hi = self.span
            if not (0 <= lo < hi <= 100):
                raise ValueError(f"span must be ordered within [0,100]: {self.span}")
        if self.magnitude is not None and self.magnitude <= 0:
            raise ValueError("magnitude must be positive")
        if self.kind == FRAGMENT and (self.fragment_count or 0) < 2:
            raise ValueError("Fragment requires fragment_count >= 2")
        if self.kind == MISSING_SEGMENT and (self.span or self.magnitude):
            raise ValueError("MissingSegment carries neither span nor magnitude")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["span"] is not None:
            d["span"] = [round(float(x), 4) for x in d["span"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EditRecord":
        span = d.get("span")
        return cls(
            kind=d["kind"],
            segment_id=int(d["segment_id"]),
            span=tuple(float(x) for x in span) if span else None,
            anchor=d.get("anchor"),
            magnitude=None if d.get("magnitude") is None else float(d["magnitude"]),
            fragment_count=None if d.get("fragment_count") is None else int(d["fragment_count"]),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class CorruptionConfig:
    kinds: list = field(default_factory=lambda: list(ALL_KINDS))
    thicken_factor: tuple[float, float] = (1.2, 2.0)
    thin_factor: tuple[float, float] = (1.2, 2.0)
    span_lo: tuple[float, float] = (10.0, 50.0)
    span_width: tuple[float, float] = (20.0, 40.0)
    shorten_pct: tuple[float, float] = (10.0, 40.0)
    disconnect_gap_pct: tuple[float, float] = (5.0, 20.0)
    fragment_count: tuple[int, int] = (2, 4)
    fragment_gap_pct: float = 4.0
    variants_per_subject: int = 15
    drop_p: float = 0.0

    def validate(self):
        if not self.kinds:
            raise ValueError("empty kind list")
        for name in ("thicken_factor", "thin_factor", "span_lo", "span_width",
                     "shorten_pct", "disconnect_gap_pct"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"inverted range for {name}: ({lo}, {hi})")
        unknown = set(self.kinds) - set(ALL_KINDS)
        if unknown:
            raise ValueError(f"unknown kinds {sorted(unknown)}")


def sample_error(rng: np.random.Generator, segment_id: int,
                 cfg: CorruptionConfig | None = None) -> EditRecord:
    """Draw one error uniformly over the enabled kinds; deterministic per rng."""
    cfg = cfg or CorruptionConfig()
    cfg.validate()
    kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
    seed = int(rng.integers(0, 2**63 - 1))
    anchor = ["proximal", "distal"][int(rng.integers(2))]
    span = None
    magnitude = None
    fragment_count = None
    if kind in (GLOBAL_THICKEN, LOCAL_THICKEN):
        magnitude = round(float(rng.uniform(*cfg.thicken_factor)), 2)
    elif kind in (GLOBAL_THIN, LOCAL_THIN):
        magnitude = round(float(rng.uniform(*cfg.thin_factor)), 2)
    if kind in (LOCAL_THICKEN, LOCAL_THIN):
        lo = float(rng.uniform(*cfg.span_lo))
        hi = min(lo + float(rng.uniform(*cfg.span_width)), 95.0)
        span = (round(lo, 1), round(hi, 1))
    elif kind == SHORTEN:
        magnitude = round(float(rng.uniform(*cfg.shorten_pct)), 1)
        span = (100.0 - magnitude, 100.0)
    elif kind == DISCONNECT:
        gap = float(rng.uniform(*cfg.disconnect_gap_pct))
        center = float(rng.uniform(25.0, 75.0))
        span = (round(center - gap / 2, 1), round(center + gap / 2, 1))
        magnitude = round(span[1] - span[0], 1)
    elif kind == FRAGMENT:
        fragment_count = int(rng.integers(cfg.fragment_count[0],
                                          cfg.fragment_count[1] + 1))
        lo = float(rng.uniform(15.0, 35.0))
        hi = float(rng.uniform(65.0, 90.0))
        span = (round(lo, 1), round(hi, 1))
        magnitude = cfg.fragment_gap_pct
    return EditRecord(kind=kind, segment_id=segment_id, span=span,
                      anchor=anchor if span is not None else None,
                      magnitude=magnitude, fragment_count=fragment_count,
                      seed=seed)


# ---------------------------------------------------------------------------
# applying errors

_UNIT_BALL = ndimage.generate_binary_structure(3, 1)


def _mean_radius(seg_bits: np.ndarray, nodes: np.ndarray,
                 spacing) -> float:
    """Mean interior distance-transform value interpolated at the nodes."""
    mask = BinaryMask(seg_bits, tuple(spacing))
    dt = distance_transform(mask)
    vals = ndimage.map_coordinates(dt, np.asarray(nodes, dtype=float).T, order=1)
    inside = vals > 0
    if not inside.any():
        return 0.0
    return float(vals[inside].mean())


def _signed_distance(seg: np.ndarray) -> np.ndarray:
    """Sub-voxel signed distance to the mask boundary (negative inside)."""
    din = ndimage.distance_transform_edt(np.pad(seg, 1))[1:-1, 1:-1, 1:-1]
    dout = ndimage.distance_transform_edt(~seg)
    return np.where(seg, 0.5 - din, dout - 0.5)


def _taper_profile(n_nodes: int, span_idx, delta_r: float) -> np.ndarray:
    """Exponent profile in [0, 1]: full strength deep inside the span,
    ramping to 0 at interior span edges over ~2x the radius change, so the
    stamped bulge/dip stays slope-limited and an inverse op (whose radius
    change is the same) ramps over the identical window and cancels."""
    lam = np.zeros(n_nodes)
    span_idx = np.atleast_1d(span_idx)
    w = max(int(np.ceil(2.0 * delta_r)), 1)
    lo, hi = int(span_idx.min()), int(span_idx.max())
    for k in span_idx:
        ramp = 1.0
        if lo > 0:
            ramp = min(ramp, (k - lo + 1) / w)
        if hi < n_nodes - 1:
            ramp = min(ramp, (hi - k + 1) / w)
        lam[k] = ramp
    return lam


def _thickness_morph(labels: np.ndarray, segment_id: int, nodes: np.ndarray,
                     factor: float, thicken: bool, spacing,
                     span_idx=None) -> np.ndarray:
    """Restamp the tube so the per-node radius becomes measured x factor
    (thicken) or ÷ factor, over the whole path or a span of node indices.
    Span edits taper at the edges so they blend into the untouched tube.
    Thickening never overwrites other foreground classes."""
    out = labels.copy()
    seg = out == segment_id
    if not seg.any():
        raise VesselForgeError(f"segment {segment_id} is empty")
    other = (out != 0) & ~seg
    mask = BinaryMask(seg, tuple(spacing))
    dt = distance_transform(mask)
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    vals = ndimage.map_coordinates(dt, nodes.T, order=1)
    inside = vals > 0
    if not inside.any():
        raise VesselForgeError("centerline does not meet the segment mask")
    rhat = _node_radii(seg, nodes)
    if span_idx is None:
        lam = np.ones(len(nodes))
    else:
        sel = rhat[np.atleast_1d(span_idx)]
        # the radius change is direction-symmetric: thickening scales the
        # untouched core up, thinning scales the (possibly bulged) peak down
        core = np.percentile(sel, 10) if thicken else np.percentile(sel, 90)
        delta_r = core * abs(factor - 1.0 if thicken else 1.0 - 1.0 / factor)
        lam = _taper_profile(len(nodes), span_idx, delta_r)
    scale = np.power(float(factor), lam)
    target = rhat * scale if thicken else rhat / scale

    def build(radii: np.ndarray) -> np.ndarray:
        pts, rr = densify_path(nodes, radii)
        st = stamp_spheres(seg.shape, pts, np.maximum(rr, 0.8))
        if thicken:
            return seg | (st & ~other)
        return seg & st

    # calibrate the stamp so the *measured* radii of the result hit the
    # target; this makes thin/thicken pairs inverse in the measure, so the
    # inverse op's target lands back inside the original lattice gap
    radii = np.maximum(target, 0.8)
    best, best_err = None, np.inf
    for _ in range(3):
        cand = build(radii)
        got = _node_radii(cand, nodes)
        err = float(np.abs(got - target).mean())
        if err < best_err:
            best, best_err = cand, err
        if err < 0.02:
            break
        radii = np.clip(radii + (target - got), 0.8, None)
    seg = best
    out[(out == segment_id) & ~seg] = 0
    out[seg] = segment_id
    return out


def _node_radii(seg: np.ndarray, nodes: np.ndarray,
                spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    from .centerline import _radii_along
    return _radii_along(BinaryMask(seg, tuple(spacing)), nodes)


def _fraction_region(seg: BinaryMask, c: Centerline, intervals,
                     anchor: str) -> np.ndarray:
    """Segment voxels whose nearest centerline node's fraction (from anchor)
    lies in any of the half-open-agnostic [lo, hi] percent intervals."""
    vox = np.argwhere(seg.bits)
    if len(vox) == 0:
        return np.zeros(seg.dims, dtype=bool)
    tree = cKDTree(c.nodes)
    _, nearest = tree.query(vox.astype(float))
    f = c.fraction_from(anchor)[nearest] * 100.0
    hit = np.zeros(len(vox), dtype=bool)
    for lo, hi in intervals:
        hit |= (f >= lo - 1e-9) & (f <= hi + 1e-9)
    region = np.zeros(seg.dims, dtype=bool)
    sel = vox[hit]
    region[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return region


def _fragment_intervals(r: EditRecord, c: Centerline) -> list[tuple[float, float]]:
    lo, hi = r.span
    count = r.fragment_count
    gap_pct = max(float(r.magnitude or 4.0),
                  100.0 * 3.0 / max(len(c.nodes) - 1, 1))  # >= 3 nodes wide
    out = []
    for i in range(1, count):
        center = lo + (hi - lo) * i / count
        out.append((center - gap_pct / 2, center + gap_pct / 2))
    return out


def apply_error(v: LabelVolume, c: Centerline, r: EditRecord) -> LabelVolume:
    """Realize one error; only voxels of the target class (or background
    gained by thickening) change."""
    seg = v.class_mask(r.segment_id)
    if seg.is_empty():
        raise VesselForgeError(f"segment {r.segment_id} is empty")
    if r.kind == MISSING_SEGMENT:
        labels = v.labels.copy()
        labels[labels == r.segment_id] = 0
        return v.with_labels(labels)
    if r.kind in (GLOBAL_THICKEN, GLOBAL_THIN):
        labels = _thickness_morph(v.labels, r.segment_id, c.nodes, r.magnitude,
                                  thicken=(r.kind == GLOBAL_THICKEN),
                                  spacing=v.spacing)
        return v.with_labels(labels)
    anchor = r.anchor or "proximal"
    if r.kind in (LOCAL_THICKEN, LOCAL_THIN):
        from .centerline import select_span

        span_nodes = select_span(c, r.span[0], r.span[1], anchor)
        labels = _thickness_morph(v.labels, r.segment_id, c.nodes, r.magnitude,
                                  thicken=(r.kind == LOCAL_THICKEN),
                                  spacing=v.spacing, span_idx=span_nodes)
        return v.with_labels(labels)
    if r.kind == SHORTEN:
        intervals = [(100.0 - r.magnitude, 100.0)]
    elif r.kind == DISCONNECT:
        intervals = [r.span]
    elif r.kind == FRAGMENT:
        intervals = _fragment_intervals(r, c)
    else:  # pragma: no cover
        raise VesselForgeError(f"unhandled kind {r.kind}")
    region = _fraction_region(seg, c, intervals, anchor)
    if r.kind in (DISCONNECT, FRAGMENT):
        # corner fill-in can leave diagonal contact across a narrow cut;
        # widen the cut until the component count actually goes up
        from .volume import component_count

        n0 = component_count(seg)
        for _ in range(4):
            cut = seg.bits & ~region
            if component_count(BinaryMask(cut, seg.spacing)) > n0:
                break
            region = ndimage.binary_dilation(region) & seg.bits
    labels = v.labels.copy()
    labels[region & (labels == r.segment_id)] = 0
    return v.with_labels(labels)


# ---------------------------------------------------------------------------
# dataset synthesis

@dataclass
class SampleTuple:
    subject_id: str
    variant_id: int
    gt_path: str
    error_path: str
    records: list = field(default_factory=list)       # [{record, dropped, doc_path, error?}]
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "subject_id": self.subject_id,
            "variant_id": self.variant_id,
            "gt_path": self.gt_path,
            "error_path": self.error_path,
            "records": self.records,
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, line: str) -> "SampleTuple":
        d = json.loads(line)
        return cls(d["subject_id"], int(d["variant_id"]), d["gt_path"],
                   d["error_path"], d["records"], int(d["seed"]))


def partition_instructions(records: list, k: int) -> list[list]:
    """Deterministic round-robin split into k disjoint lists."""
    if k < 1:
        raise ValueError("k must be >= 1")
    parts: list[list] = [[] for _ in range(k)]
    for i, r in enumerate(records):
        parts[i % k].append(r)
    return parts


def synthesize_dataset(subjects, cfg: CorruptionConfig | None = None,
                       out_dir=None, seed: int = 0, first_index: int = 0,
                       write_manifest: bool = True,
                       paraphrase_cfg=None) -> list[SampleTuple]:
    """Produce ``variants_per_subject`` corrupted volumes per subject.

    ``subjects`` is a list of (subject_id, LabelVolume, {class_id: Centerline}).
    Every available segment is corrupted once per variant; records flagged
    ``dropped`` (probability ``cfg.drop_p``) are kept in the manifest but not
    applied. Writes gt/error volumes, instruction docs, and manifest.jsonl.
    """
    from .instruction import render_instruction

    cfg = cfg or CorruptionConfig()
    cfg.validate()
    if not subjects:
        raise ValueError("no subjects")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: list[SampleTuple] = []
    for s_idx, (subject_id, vol, centerlines) in enumerate(subjects,
                                                           start=first_index):
        gt_rel = f"{subject_id}_gt"
        save_volume(vol, out_dir / gt_rel, "rawl")
        for variant in range(cfg.variants_per_subject):
            rng = np.random.default_rng([seed, s_idx, variant])
            cur = vol.copy()
            rec_entries = []
            for cid in sorted(centerlines):
                record = sample_error(rng, cid, cfg)
                dropped = bool(rng.random() < cfg.drop_p)
                entry = {"record": record.to_dict(), "dropped": dropped}
                if not dropped:
                    try:
                        cur = apply_error(cur, centerlines[cid], record)
                    except VesselForgeError as e:
                        entry["error"] = str(e)
                try:
                    doc = render_instruction(record, "detailed", vol.label_map)
                    if paraphrase_cfg is not None:
                        from .llm_bridge import paraphrase
                        doc = paraphrase(doc, paraphrase_cfg)
                    entry["doc"] = doc.to_dict()
                except VesselForgeError as e:
                    entry["doc_error"] = str(e)
                rec_entries.append(entry)
            err_rel = f"{subject_id}_v{variant:02d}"
            save_volume(cur, out_dir / err_rel, "rawl")
            manifest.append(SampleTuple(subject_id, variant, gt_rel, err_rel,
                                        rec_entries, seed))
    if write_manifest:
        with open(out_dir / "manifest.jsonl", "w") as fh:
            for sample in manifest:
                fh.write(sample.to_json() + "\n")
    return manifest


def rebuild_variant(gt: LabelVolume, centerlines: dict[int, Centerline],
                    sample: SampleTuple) -> LabelVolume:
    """Re-apply the manifest records to the GT; bit-identical to the stored
    error volume by operator determinism."""
    cur = gt.copy()
    for entry in sample.records:
        if entry.get("dropped"):
            continue
        record = EditRecord.from_dict(entry["record"])
        try:
            cur = apply_error(cur, centerlines[record.segment_id], record)
        except VesselForgeError:
            if "error" not in entry:
                raise
    return cur
