"""Deterministic geometric realization of the iterative instruction loop.

Corrective commands are applied by tube-aware morphology and capsule
stamping. Spans and restoration geometry are parameterized on a per-segment
reference centerline: the one supplied at session creation when available
(typically the ground-truth centerline), otherwise a skeleton of the current
mask computed on demand and invalidated after edits to that segment.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

import numpy as np

from .centerline import Centerline, cylinder_union, select_span, skeletonize
from .corruption import _fraction_region, _thickness_morph, _mean_radius
from .errors import CommandError, EmptySpanError, NotTubularError, \
    ReplayDivergenceError, VesselForgeError
from .instruction import (
    BRIDGE,
    CONSOLIDATE,
    EXTEND,
    REMOVE,
    RESTORE,
    THICKEN,
    THIN,
    EditCommand,
    command_to_dict,
    parse_instruction,
)
from .stamping import densify_path, stamp_spheres
from .volume import LabelVolume, component_count


@dataclass
class RefinementSession:
    current: LabelVolume
    gt: LabelVolume | None = None
    session_id: str = field(default_factory=lambda: secrets.token_hex(16))
    reference_centerlines: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    _derived: dict = field(default_factory=dict)  # skeletonized cache

    @property
    def initial_hash(self) -> str:
        if self.history:
            return self.history[0]["initial_hash"]
        return self.current.content_hash()


def _resolve_centerline(session: RefinementSession, segment_id: int) -> Centerline:
    ref = session.reference_centerlines.get(segment_id)
    if ref is not None:
        return ref
    cached = session._derived.get(segment_id)
    if cached is not None:
        return cached
    mask = session.current.class_mask(segment_id)
    if mask.is_empty():
        raise CommandError(f"segment {segment_id} is empty and has no "
                           f"reference centerline")
    try:
        c = skeletonize(mask, segment_id=segment_id)
    except NotTubularError as e:
        raise CommandError(f"cannot derive centerline: {e}") from e
    session._derived[segment_id] = c
    return c


# ---------------------------------------------------------------------------
# individual actions

def _span_node_indices(c, cmd):
    """Node indices a thickness command touches (whole path when no span)."""
    if cmd.span is None:
        return np.arange(len(c.nodes))
    return np.atleast_1d(
        select_span(c, cmd.span.p_lo, cmd.span.p_hi, cmd.span.anchor))


def _apply_thickness(v: LabelVolume, c: Centerline, cmd: EditCommand) -> LabelVolume:
    if cmd.magnitude is None:
        raise CommandError("insufficient parameters: thickness change needs a "
                           "factor or target radius")
    touched = _span_node_indices(c, cmd)
    seg = v.labels == cmd.segment_id
    if not seg.any():
        raise CommandError(f"segment {cmd.segment_id} is empty")
    if cmd.magnitude.unit == "factor":
        factor = cmd.magnitude.value
    elif cmd.magnitude.unit in ("mm", "radius_mm", "voxels"):
        target = cmd.magnitude.value
        if cmd.magnitude.unit in ("mm", "radius_mm"):
            target /= float(np.mean(v.spacing))
        cur = _mean_radius(seg, c.nodes[touched], v.spacing)
        if cur <= 0:
            raise CommandError("cannot measure current radius")
        factor = (target / cur) if cmd.action == THICKEN else (cur / target)
        factor = max(factor, 1.0)
    else:
        raise CommandError(f"unsupported magnitude unit {cmd.magnitude.unit}")
    span_idx = None if cmd.span is None else touched
    labels = _thickness_morph(v.labels, cmd.segment_id, c.nodes, factor,
                              thicken=(cmd.action == THICKEN),
                              spacing=v.spacing, span_idx=span_idx)
    return v.with_labels(labels)


def _stamp_into(v: LabelVolume, segment_id: int, points, radii) -> LabelVolume:
    pts, rr = densify_path(points, radii)
    if rr is None:
        rr = np.ones(len(pts))
    new = stamp_spheres(v.dims, pts, np.maximum(rr, 1.0))
    labels = v.labels.copy()
    labels[new & (labels == 0)] = segment_id
    return v.with_labels(labels)


def _missing_runs(v: LabelVolume, c: Centerline, segment_id: int):
    """Maximal runs of centerline node indices whose voxel is not currently
    labeled with the segment."""
    dims = np.asarray(v.dims)
    idx = np.clip(np.rint(c.nodes).astype(int), 0, dims - 1)
    inside = v.labels[idx[:, 0], idx[:, 1], idx[:, 2]] == segment_id
    runs = []
    start = None
    for i, ok in enumerate(inside):
        if not ok and start is None:
            start = i
        elif ok and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(inside) - 1))
    return runs, inside


def _stump_radius(v: LabelVolume, segment_id: int, c: Centerline,
                  node_index: int) -> float:
    from .volume import distance_transform

    mask = v.class_mask(segment_id)
    if mask.is_empty():
        return 1.0
    dt = distance_transform(mask)
    idx = np.clip(np.rint(c.nodes[node_index]).astype(int), 0,
                  np.asarray(v.dims) - 1)
    r = float(dt[idx[0], idx[1], idx[2]])
    return max(r, 1.0)


def _run_radii(v, c, run, inside):
    """Radii along a gap run: reference radii where positive, else the
    linear blend of the flanking stump radii."""
    i0, i1 = run
    left = i0 - 1 if i0 > 0 and inside[i0 - 1] else None
    right = i1 + 1 if i1 + 1 < len(c.nodes) and inside[i1 + 1] else None
    r_left = _stump_radius(v, c.segment_id, c, left) if left is not None else None
    r_right = _stump_radius(v, c.segment_id, c, right) if right is not None else None
    if r_left is None and r_right is None:
        base = np.ones(i1 - i0 + 1)
    elif r_left is None:
        base = np.full(i1 - i0 + 1, r_right)
    elif r_right is None:
        base = np.full(i1 - i0 + 1, r_left)
    else:
        base = np.linspace(r_left, r_right, i1 - i0 + 1)
    ref = np.asarray(c.radii[i0:i1 + 1], dtype=float)
    return np.where(ref > 0.5, ref, base)


def _apply_extend(session_v: LabelVolume, c: Centerline,
                  cmd: EditCommand) -> LabelVolume:
    v = session_v
    if cmd.magnitude is None or cmd.end is None:
        raise CommandError("insufficient parameters: extend needs an end and "
                           "a length")
    seg_mask = v.class_mask(cmd.segment_id)
    if seg_mask.is_empty():
        raise CommandError(f"segment {cmd.segment_id} is empty")
    runs, inside = _missing_runs(v, c, cmd.segment_id)
    if not inside.any():
        raise CommandError("segment mask does not meet its centerline")
    # current tube length along the reference parameterization
    n_inside = int(inside.sum())
    if cmd.magnitude.unit == "percent":
        m = cmd.magnitude.value
        if m >= 100:
            raise CommandError("extend percent must be < 100")
        # restore the pre-shortening length: removed m% of the original
        ext_len = (n_inside - 1) * m / (100.0 - m)
    elif cmd.magnitude.unit in ("voxels",):
        ext_len = cmd.magnitude.value
    elif cmd.magnitude.unit in ("mm",):
        ext_len = cmd.magnitude.value / float(np.mean(v.spacing))
    else:
        raise CommandError(f"unsupported extend unit {cmd.magnitude.unit}")
    end_run = None
    if cmd.end == "proximal" and runs and runs[0][0] == 0:
        end_run = runs[0]
    elif cmd.end == "distal" and runs and runs[-1][1] == len(c.nodes) - 1:
        end_run = runs[-1]
    if end_run is not None:
        # reference centerline reaches past the stump: stamp along it
        i0, i1 = end_run
        radii = _run_radii(v, c, end_run, inside)
        if cmd.end == "proximal":
            pts = c.nodes[i0:i1 + 1][::-1]
            rr = radii[::-1]
        else:
            pts = c.nodes[i0:i1 + 1]
            rr = radii
        # limit to the instructed arclength (+1 node tolerance)
        limit = int(np.ceil(ext_len)) + 1
        pts = pts[:limit + 1]
        rr = rr[:limit + 1]
        return _stamp_into(v, cmd.segment_id, pts, rr)
    # no reference beyond the stump: extrapolate along the endpoint tangent
    in_idx = np.flatnonzero(inside)
    if cmd.end == "proximal":
        stump_i = int(in_idx[0])
        direction = -c.tangents[stump_i]
    else:
        stump_i = int(in_idx[-1])
        direction = c.tangents[stump_i]
    r = _stump_radius(v, cmd.segment_id, c, stump_i)
    steps = np.arange(0.0, ext_len + 1e-9, 0.5)
    pts = c.nodes[stump_i] + np.outer(steps, direction)
    return _stamp_into(v, cmd.segment_id, pts, np.full(len(pts), r))


def _apply_bridge(v: LabelVolume, c: Centerline, cmd: EditCommand,
                  consolidate: bool = False) -> LabelVolume:
    seg = v.class_mask(cmd.segment_id)
    if seg.is_empty():
        raise CommandError(f"segment {cmd.segment_id} is empty")
    if component_count(seg) < 2:
        raise CommandError("no stumps found: segment is a single component")
    runs, inside = _missing_runs(v, c, cmd.segment_id)
    # interior gap runs only (end runs are extensions, not bridges)
    gaps = [r for r in runs if r[0] > 0 and r[1] < len(c.nodes) - 1]
    if cmd.span is not None:
        f = c.fraction_from(cmd.span.anchor) * 100.0
        lo, hi = cmd.span.p_lo, cmd.span.p_hi
        margin = 2.0
        sel = [g for g in gaps
               if f[g[0]:g[1] + 1].min() >= lo - margin - 1e-9
               and f[g[0]:g[1] + 1].max() <= hi + margin + 1e-9]
        if sel:
            gaps = sel
    if not gaps:
        raise CommandError("no stumps found: no gap on the centerline")
    if not consolidate:
        gaps = [min(gaps, key=lambda g: g[1] - g[0])]
    out = v
    for run in gaps:
        i0, i1 = run
        radii = _run_radii(out, c, run, inside)
        lo_i = max(i0 - 1, 0)
        hi_i = min(i1 + 1, len(c.nodes) - 1)
        pts = c.nodes[lo_i:hi_i + 1]
        rr = np.concatenate([[radii[0]], radii, [radii[-1]]])[: hi_i - lo_i + 1]
        out = _stamp_into(out, cmd.segment_id, pts, rr)
    return out


def _apply_restore(v: LabelVolume, session: RefinementSession,
                   cmd: EditCommand) -> LabelVolume:
    ref = session.reference_centerlines.get(cmd.segment_id)
    if ref is not None:
        radii = np.asarray(ref.radii, dtype=float)
        if cmd.magnitude is not None and cmd.magnitude.unit in ("radius_mm", "mm"):
            radii = np.full(len(ref.nodes),
                            cmd.magnitude.value / float(np.mean(v.spacing)))
        elif cmd.magnitude is not None and cmd.magnitude.unit == "voxels":
            radii = np.full(len(ref.nodes), cmd.magnitude.value)
        return _stamp_into(v, cmd.segment_id, ref.nodes, np.maximum(radii, 1.0))
    if cmd.hints is not None and cmd.hints[0] == "connect":
        _, a, b = cmd.hints
        pa = _nearest_voxel_of(v, a)
        pb = _nearest_voxel_of(v, b, toward=pa)
        if pa is None or pb is None:
            raise CommandError("insufficient parameters: hinted neighbor "
                               "segments are empty")
        if cmd.magnitude is not None and cmd.magnitude.unit in ("radius_mm", "mm"):
            r = cmd.magnitude.value / float(np.mean(v.spacing))
        elif cmd.magnitude is not None and cmd.magnitude.unit == "voxels":
            r = cmd.magnitude.value
        else:
            r = 2.0
        return _stamp_into(v, cmd.segment_id, np.stack([pa, pb]), r)
    raise CommandError("insufficient parameters: restore needs a reference "
                       "centerline or attachment hints")


def _nearest_voxel_of(v: LabelVolume, class_id: int, toward=None):
    vox = np.argwhere(v.labels == class_id)
    if len(vox) == 0:
        return None
    if toward is None:
        return vox[len(vox) // 2].astype(float)
    d2 = ((vox - np.asarray(toward)) ** 2).sum(axis=1)
    return vox[int(np.argmin(d2))].astype(float)


def _apply_remove(v: LabelVolume, session: RefinementSession,
                  cmd: EditCommand) -> LabelVolume:
    labels = v.labels.copy()
    if cmd.span is None:
        labels[labels == cmd.segment_id] = 0
        return v.with_labels(labels)
    c = _resolve_centerline(session, cmd.segment_id)
    region = _fraction_region(v.class_mask(cmd.segment_id), c,
                              [(cmd.span.p_lo, cmd.span.p_hi)],
                              cmd.span.anchor)
    labels[region & (labels == cmd.segment_id)] = 0
    return v.with_labels(labels)


def apply_command(session: RefinementSession, cmd: EditCommand) -> LabelVolume:
    """Apply one command to the session's current volume (pure: returns the
    new volume, does not mutate the session)."""
    v = session.current
    if cmd.segment_id not in v.label_map:
        raise CommandError(f"unknown segment id {cmd.segment_id}")
    if cmd.action in (THICKEN, THIN):
        c = _resolve_centerline(session, cmd.segment_id)
        try:
            return _apply_thickness(v, c, cmd)
        except (EmptySpanError, VesselForgeError) as e:
            raise CommandError(str(e)) from e
    if cmd.action == EXTEND:
        c = _resolve_centerline(session, cmd.segment_id)
        return _apply_extend(v, c, cmd)
    if cmd.action == BRIDGE:
        c = _resolve_centerline(session, cmd.segment_id)
        return _apply_bridge(v, c, cmd, consolidate=False)
    if cmd.action == CONSOLIDATE:
        c = _resolve_centerline(session, cmd.segment_id)
        seg = v.class_mask(cmd.segment_id)
        if component_count(seg) < 2:
            return v  # idempotent: already consolidated
        return _apply_bridge(v, c, cmd, consolidate=True)
    if cmd.action == RESTORE:
        return _apply_restore(v, session, cmd)
    if cmd.action == REMOVE:
        return _apply_remove(v, session, cmd)
    raise CommandError(f"unknown action {cmd.action}")


# ---------------------------------------------------------------------------
# the iterative loop

def refine_step(session: RefinementSession, instruction_text: str,
                compute_metrics: bool = True) -> dict:
    """Parse the instruction, apply its clauses in order, append a history
    entry, and return that entry. Failed clauses are recorded without
    aborting successful ones; the volume is unchanged if every clause fails.
    """
    result = parse_instruction(instruction_text, session.current.label_map)
    initial_hash = session.current.content_hash()
    if not session.history:
        base = initial_hash
    else:
        base = session.history[0]["initial_hash"]
    working = session.current
    outcomes = []
    changed_segments = set()
    for outcome in result.outcomes:
        if isinstance(outcome, EditCommand):
            try:
                working = apply_command(
                    RefinementSession(working, session.gt, session.session_id,
                                      session.reference_centerlines,
                                      _derived=session._derived),
                    outcome)
                changed_segments.add(outcome.segment_id)
                outcomes.append({"command": command_to_dict(outcome),
                                 "status": "ok"})
            except CommandError as e:
                outcomes.append({"command": command_to_dict(outcome),
                                 "status": "error", "message": str(e)})
        else:
            outcomes.append({"status": "parse_error",
                             "clause_index": outcome.clause_index,
                             "start": outcome.start, "end": outcome.end,
                             "message": outcome.message})
    changed = int(np.count_nonzero(working.labels != session.current.labels))
    session.current = working
    for sid in changed_segments:
        session._derived.pop(sid, None)
    entry = {
        "instruction": instruction_text,
        "outcomes": outcomes,
        "commands": [command_to_dict(o) for o in result.commands],
        "hash": working.content_hash(),
        "initial_hash": base,
        "changed_voxels": changed,
    }
    if compute_metrics and session.gt is not None:
        from .metrics import evaluate

        entry["metrics"] = evaluate(session.current, session.gt).to_dict()
    session.history.append(entry)
    return entry


def replay(initial: LabelVolume, history: list,
           reference_centerlines: dict | None = None,
           upto: int | None = None) -> LabelVolume:
    """Re-run recorded instructions from the initial volume, verifying every
    recorded hash; supports truncation (undo) via ``upto`` (inclusive)."""
    session = RefinementSession(initial.copy(),
                                reference_centerlines=dict(
                                    reference_centerlines or {}))
    steps = history if upto is None else history[: upto + 1]
    for k, recorded in enumerate(steps):
        entry = refine_step(session, recorded["instruction"],
                            compute_metrics=False)
        if entry["hash"] != recorded["hash"]:
            raise ReplayDivergenceError(k)
    return session.current
