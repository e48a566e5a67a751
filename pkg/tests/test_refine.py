"""Command application, the refinement loop, and history replay."""

import numpy as np
import pytest

from vesselforge.corruption import EditRecord, apply_error
from vesselforge.errors import ReplayDivergenceError
from vesselforge.instruction import (
    EditCommand,
    Magnitude,
    Span,
    invert_record,
    render_instruction,
)
from vesselforge.metrics import dice
from vesselforge.phantoms import make_phantom
from vesselforge.refine import (
    RefinementSession,
    apply_command,
    refine_step,
    replay,
)
from vesselforge.volume import component_count


def _session(vol, c, gt=None):
    return RefinementSession(vol.copy(), gt=gt,
                             reference_centerlines={c.segment_id: c})


def _fix(vol, c, record, gt):
    """Corrupt with the record's inverse already applied: run the rendered
    correction and return the result."""
    s = _session(vol, c, gt)
    text = render_instruction(record, label_map=vol.label_map).detailed
    refine_step(s, text)
    return s


# ---------------------------------------------------------------------------
# individual commands

def test_thicken_command_grows_segment():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    out = apply_command(s, EditCommand("Thicken", 7,
                                       magnitude=Magnitude(1.5, "factor")))
    assert out.voxel_counts()[7] > vol.voxel_counts()[7]


def test_thin_command_shrinks_segment():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    out = apply_command(s, EditCommand("Thin", 7,
                                       magnitude=Magnitude(1.5, "factor")))
    assert out.voxel_counts()[7] < vol.voxel_counts()[7]


def test_thickness_with_absolute_radius_unit():
    vol, c = make_phantom("straight")  # radius 3
    s = _session(vol, c)
    out = apply_command(s, EditCommand("Thicken", 7,
                                       magnitude=Magnitude(4.5, "radius_mm")))
    from vesselforge.centerline import _radii_along

    r = _radii_along(out.class_mask(7), c.nodes)[4:-4]
    assert abs(float(r.mean()) - 4.5) < 0.5


def test_restore_rebuilds_from_reference():
    vol, c = make_phantom("helix")
    corrupted = apply_error(vol, c, EditRecord("MissingSegment", 7))
    s = _session(corrupted, c)
    out = apply_command(s, EditCommand("RestoreSegment", 7))
    assert dice(out.class_mask(7), vol.class_mask(7)) >= 0.90


def test_bridge_closes_gap():
    vol, c = make_phantom("s_curve")
    rec = EditRecord("Disconnect", 7, span=(45.0, 55.0), anchor="proximal",
                     magnitude=10.0)
    corrupted = apply_error(vol, c, rec)
    assert component_count(corrupted.class_mask(7)) == 2
    s = _session(corrupted, c)
    out = apply_command(s, invert_record(rec))
    assert component_count(out.class_mask(7)) == 1
    assert dice(out.class_mask(7), vol.class_mask(7)) >= 0.90


def test_consolidate_closes_all_gaps_and_is_idempotent():
    vol, c = make_phantom("oblique")
    rec = EditRecord("Fragment", 7, span=(15.0, 85.0), anchor="proximal",
                     magnitude=5.0, fragment_count=4)
    corrupted = apply_error(vol, c, rec)
    assert component_count(corrupted.class_mask(7)) == 4
    s = _session(corrupted, c)
    out = apply_command(s, invert_record(rec))
    assert component_count(out.class_mask(7)) == 1
    s2 = _session(out, c)
    again = apply_command(s2, invert_record(rec))
    assert again.content_hash() == out.content_hash()


def test_extend_restores_shortened_length():
    vol, c = make_phantom("straight")
    rec = EditRecord("Shorten", 7, span=(70.0, 100.0), anchor="proximal",
                     magnitude=30.0)
    corrupted = apply_error(vol, c, rec)
    s = _session(corrupted, c)
    out = apply_command(s, invert_record(rec))
    assert dice(out.class_mask(7), vol.class_mask(7)) >= 0.90


def test_remove_span_clears_region_only():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    out = apply_command(s, EditCommand("Remove", 7,
                                       span=Span(0.0, 20.0, "proximal")))
    assert 0 < out.voxel_counts()[7] < vol.voxel_counts()[7]
    out2 = apply_command(s, EditCommand("Remove", 7))
    assert 7 not in out2.voxel_counts()


def test_commands_error_cleanly():
    from vesselforge.errors import CommandError

    vol, c = make_phantom("straight")
    s = _session(vol, c)
    with pytest.raises(CommandError):
        apply_command(s, EditCommand("Thicken", 99,
                                     magnitude=Magnitude(1.5, "factor")))
    with pytest.raises(CommandError):
        apply_command(s, EditCommand("Thicken", 7))  # no magnitude
    with pytest.raises(CommandError):
        apply_command(s, EditCommand("Bridge", 7))  # nothing disconnected
    with pytest.raises(CommandError):
        apply_command(s, EditCommand("Extend", 7,
                                     magnitude=Magnitude(10.0, "percent")))


def test_derived_centerline_used_when_no_reference():
    vol, c = make_phantom("s_curve")
    s = RefinementSession(vol.copy())  # no reference centerlines
    out = apply_command(s, EditCommand("Thin", 7,
                                       magnitude=Magnitude(1.3, "factor")))
    assert out.voxel_counts()[7] < vol.voxel_counts()[7]
    assert 7 in s._derived  # skeletonized once, cached


# ---------------------------------------------------------------------------
# the loop

def test_refine_step_applies_and_records():
    vol, c = make_phantom("straight")
    rec = EditRecord("GlobalThicken", 7, magnitude=1.5)
    corrupted = apply_error(vol, c, rec)
    s = _session(corrupted, c, gt=vol)
    entry = refine_step(s, "Thin the L-MCA by a factor of 1.5.")
    assert entry["outcomes"][0]["status"] == "ok"
    assert entry["changed_voxels"] > 0
    assert entry["hash"] == s.current.content_hash()
    assert entry["metrics"]["macro_dice"] >= 0.95
    assert len(s.history) == 1


def test_refine_step_partial_failure_keeps_good_clauses():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    entry = refine_step(s, "Thin the L-MCA by a factor of 1.2; "
                           "squiggle the L-MCA. Bridge the BA.")
    statuses = [o["status"] for o in entry["outcomes"]]
    assert statuses == ["ok", "parse_error", "error"]
    assert entry["changed_voxels"] > 0


def test_refine_step_all_failures_leave_volume_unchanged():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    h0 = s.current.content_hash()
    entry = refine_step(s, "Squiggle the BA.")
    assert entry["changed_voxels"] == 0
    assert s.current.content_hash() == h0


def test_replay_reproduces_hashes_and_supports_undo():
    vol, c = make_phantom("l_shaped")
    rec = EditRecord("GlobalThicken", 7, magnitude=1.4)
    corrupted = apply_error(vol, c, rec)
    s = _session(corrupted, c)
    refine_step(s, "Thin the L-MCA by a factor of 1.4.")
    refine_step(s, "Thicken the L-MCA by a factor of 1.1.")
    refs = {7: c}
    final = replay(corrupted, s.history, refs)
    assert final.content_hash() == s.current.content_hash()
    partial = replay(corrupted, s.history, refs, upto=0)
    assert partial.content_hash() == s.history[0]["hash"]


def test_replay_detects_divergence():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    refine_step(s, "Thin the L-MCA by a factor of 1.3.")
    tampered = [dict(s.history[0], hash="0" * 64)]
    with pytest.raises(ReplayDivergenceError):
        replay(vol, tampered, {7: c})


def test_initial_hash_stable_across_steps():
    vol, c = make_phantom("straight")
    s = _session(vol, c)
    h0 = s.initial_hash
    refine_step(s, "Thin the L-MCA by a factor of 1.2.")
    refine_step(s, "Thicken the L-MCA by a factor of 1.2.")
    assert s.initial_hash == h0
    assert all(e["initial_hash"] == h0 for e in s.history)
