"""HTTP session service: uploads, instructions, views, rollback, snapshots."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vesselforge.corruption import EditRecord, apply_error
from vesselforge.instruction import render_instruction
from vesselforge.phantoms import make_phantom
from vesselforge.service import SessionStore, create_app
from vesselforge.volume import save_volume


@pytest.fixture
def fixture_files(tmp_path):
    vol, c = make_phantom("straight")
    rec = EditRecord("GlobalThicken", 7, magnitude=1.5)
    corrupted = apply_error(vol, c, rec)
    save_volume(vol, tmp_path / "gt.rawl.json")
    save_volume(corrupted, tmp_path / "cor.rawl.json")
    (tmp_path / "cl.json").write_text(
        json.dumps({"7": json.loads(c.to_json())}))
    text = render_instruction(rec, label_map=vol.label_map).detailed
    return tmp_path, text


def _client(snapshot_dir=None, size_cap=512 ** 3):
    return TestClient(create_app(SessionStore(), snapshot_dir=snapshot_dir,
                                 size_cap=size_cap))


def _create(cli, d, gt=True):
    body = {"volume_path": str(d / "cor.rawl.json"),
            "centerlines_path": str(d / "cl.json")}
    if gt:
        body["gt_path"] = str(d / "gt.rawl.json")
    r = cli.post("/sessions", json=body)
    assert r.status_code == 201, r.text
    return r.json()


def test_create_and_get_session(fixture_files):
    d, _ = fixture_files
    cli = _client()
    info = _create(cli, d)
    assert info["hash"] == info["initial_hash"]
    assert "7" in info["voxel_counts"]
    assert info["metrics"]["macro_dice"] < 1.0
    got = cli.get(f"/sessions/{info['session_id']}").json()
    assert got["hash"] == info["hash"]


def test_multipart_rawl_upload(fixture_files):
    d, _ = fixture_files
    cli = _client()
    r = cli.post("/sessions", files={
        "volume": ("v.bin", (d / "cor.rawl.bin").read_bytes()),
        "volume_header": ("v.json", (d / "cor.rawl.json").read_bytes()),
        "gt": ("g.bin", (d / "gt.rawl.bin").read_bytes()),
        "gt_header": ("g.json", (d / "gt.rawl.json").read_bytes()),
        "centerlines": ("c.json", (d / "cl.json").read_bytes()),
    })
    assert r.status_code == 201, r.text
    assert "metrics" in r.json()


def test_nifti_upload(tmp_path):
    vol, _ = make_phantom("helix")
    save_volume(vol, tmp_path / "v.nii.gz")
    cli = _client()
    r = cli.post("/sessions", files={
        "volume": ("v.nii.gz", (tmp_path / "v.nii.gz").read_bytes()),
    })
    assert r.status_code == 201, r.text
    assert r.json()["dims"] == list(vol.dims)


def test_instruction_flow_and_rollback(fixture_files):
    d, text = fixture_files
    cli = _client()
    info = _create(cli, d)
    sid = info["session_id"]

    r = cli.post(f"/sessions/{sid}/instructions", json={"text": text})
    assert r.status_code == 200, r.text
    step1 = r.json()
    assert step1["changed_voxels"] > 0
    assert step1["metrics"]["macro_dice"] > info["metrics"]["macro_dice"]

    r = cli.post(f"/sessions/{sid}/instructions",
                 json={"text": "Thicken the L-MCA by a factor of 1.1."})
    assert r.status_code == 200
    assert cli.get(f"/sessions/{sid}/history").json()["steps"][1]

    r = cli.post(f"/sessions/{sid}/rollback", json={"step": 0})
    assert r.status_code == 200
    assert r.json()["hash"] == step1["hash"]
    assert r.json()["steps"] == 1


def test_all_failing_clauses_return_422_and_leave_state(fixture_files):
    d, _ = fixture_files
    cli = _client()
    info = _create(cli, d)
    sid = info["session_id"]
    r = cli.post(f"/sessions/{sid}/instructions",
                 json={"text": "Perforate the L-MCA."})
    assert r.status_code == 422
    assert r.json()["hash"] == info["hash"]
    assert cli.get(f"/sessions/{sid}").json()["steps"] == 0


def test_views(fixture_files):
    d, _ = fixture_files
    cli = _client()
    sid = _create(cli, d)["session_id"]
    pc = cli.get(f"/sessions/{sid}/view",
                 params={"kind": "pointcloud", "stride": 3}).json()
    assert pc["points"] and all(len(p) == 4 for p in pc["points"])
    assert pc["label_map"]["7"] == "L-MCA"
    sl = cli.get(f"/sessions/{sid}/view",
                 params={"kind": "slice", "axis": "z", "index": 8}).json()
    assert np.asarray(sl["data"]).ndim == 2
    assert cli.get(f"/sessions/{sid}/view",
                   params={"kind": "slice", "axis": "q", "index": 0}).status_code == 400
    assert cli.get(f"/sessions/{sid}/view",
                   params={"kind": "slice", "axis": "z", "index": 10 ** 6}).status_code == 400
    assert cli.get(f"/sessions/{sid}/view",
                   params={"kind": "mesh"}).status_code == 400


def test_metrics_endpoint(fixture_files):
    d, _ = fixture_files
    cli = _client()
    sid = _create(cli, d)["session_id"]
    r = cli.get(f"/sessions/{sid}/metrics")
    assert r.status_code == 200
    assert "macro_dice" in r.json()["report"]
    sid2 = _create(cli, d, gt=False)["session_id"]
    assert cli.get(f"/sessions/{sid2}/metrics").status_code == 400


def test_error_statuses(fixture_files):
    d, _ = fixture_files
    cli = _client()
    assert cli.get("/sessions/deadbeef").status_code == 404
    assert cli.post("/sessions/deadbeef/instructions",
                    json={"text": "x"}).status_code == 404
    assert cli.post("/sessions", json={"volume_path": "/no/such"}).status_code == 400
    sid = _create(cli, d)["session_id"]
    assert cli.post(f"/sessions/{sid}/rollback", json={"step": 5}).status_code == 400
    # gt dims mismatch
    other, _ = make_phantom("helix")
    save_volume(other, d / "other.rawl.json")
    r = cli.post("/sessions", json={"volume_path": str(d / "cor.rawl.json"),
                                    "gt_path": str(d / "other.rawl.json")})
    assert r.status_code == 400


def test_size_cap_413(fixture_files):
    d, _ = fixture_files
    cli = _client(size_cap=1000)
    r = cli.post("/sessions", json={"volume_path": str(d / "cor.rawl.json")})
    assert r.status_code == 413


def test_sessions_are_isolated(fixture_files):
    d, text = fixture_files
    cli = _client()
    a = _create(cli, d)
    b = _create(cli, d)
    assert a["session_id"] != b["session_id"]
    cli.post(f"/sessions/{a['session_id']}/instructions", json={"text": text})
    untouched = cli.get(f"/sessions/{b['session_id']}").json()
    assert untouched["hash"] == b["hash"]
    assert untouched["steps"] == 0


def test_snapshot_restore_preserves_hashes(fixture_files, tmp_path):
    d, text = fixture_files
    snap = tmp_path / "snap"
    cli = _client(snapshot_dir=snap)
    sid = _create(cli, d)["session_id"]
    h = cli.post(f"/sessions/{sid}/instructions",
                 json={"text": text}).json()["hash"]
    # a fresh app over the same snapshot dir restores the session
    cli2 = _client(snapshot_dir=snap)
    got = cli2.get(f"/sessions/{sid}")
    assert got.status_code == 200
    assert got.json()["hash"] == h
    assert got.json()["steps"] == 1


def test_lru_eviction():
    vol, _ = make_phantom("straight")
    store = SessionStore(capacity=2)
    cli = TestClient(create_app(store))
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as td:
        save_volume(vol, Path(td) / "v.rawl.json")
        sids = [cli.post("/sessions", json={
            "volume_path": str(Path(td) / "v.rawl.json")}).json()["session_id"]
            for _ in range(3)]
    assert cli.get(f"/sessions/{sids[0]}").status_code == 404
    assert cli.get(f"/sessions/{sids[2]}").status_code == 200
