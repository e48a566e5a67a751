"""Session-oriented HTTP API around the iterative refinement loop.

One writer at a time per session (per-session lock); sessions are kept in an
LRU store and optionally snapshotted to disk so a restarted server restores
identical content hashes. Every successful mutation response carries the
post-state content hash so clients can detect divergence cheaply.
"""

from __future__ import annotations

import json
import shutil
import tempfile
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .centerline import Centerline
from .errors import VesselForgeError, VolumeIOError
from .llm_bridge import BridgeConfig, BridgeError, UnnormalizableError, normalize
from .metrics import evaluate
from .refine import RefinementSession, refine_step, replay
from .volume import (
    LabelVolume,
    load_volume,
    load_volume_bytes,
    save_volume,
    surface_voxels,
)

SIZE_CAP_VOXELS = 512 ** 3


@dataclass
class SessionRecord:
    session: RefinementSession
    initial: LabelVolume
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_access: float = field(default_factory=time.monotonic)


class SessionStore:
    """LRU map session_id -> SessionRecord; thread-safe."""

    def __init__(self, capacity: int = 32):
        self.capacity = capacity
        self._map: OrderedDict[str, SessionRecord] = OrderedDict()
        self._guard = threading.Lock()

    def put(self, rec: SessionRecord) -> str:
        sid = rec.session.session_id
        with self._guard:
            self._map[sid] = rec
            self._map.move_to_end(sid)
            while len(self._map) > self.capacity:
                self._map.popitem(last=False)
        return sid

    def get(self, sid: str) -> SessionRecord:
        with self._guard:
            rec = self._map.get(sid)
            if rec is None:
                raise KeyError(sid)
            self._map.move_to_end(sid)
            rec.last_access = time.monotonic()
            return rec

    def ids(self) -> list[str]:
        with self._guard:
            return list(self._map)


def _decode_upload(name: str, data: bytes, header: bytes | None) -> LabelVolume:
    if header is not None:
        return load_volume_bytes(header, data)
    # NIfTI bytes: stage to a temp file for the regular reader
    suffix = ".nii.gz" if data[:2] == b"\x1f\x8b" else ".nii"
    with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as f:
        f.write(data)
        tmp = Path(f.name)
    try:
        return load_volume(tmp)
    finally:
        tmp.unlink(missing_ok=True)


def _summary(rec: SessionRecord) -> dict:
    s = rec.session
    out = {
        "session_id": s.session_id,
        "hash": s.current.content_hash(),
        "initial_hash": s.initial_hash,
        "voxel_counts": {str(k): v for k, v in s.current.voxel_counts().items()},
        "dims": list(s.current.dims),
        "spacing": list(s.current.spacing),
        "steps": len(s.history),
    }
    if s.gt is not None:
        out["metrics"] = evaluate(s.current, s.gt).to_dict()
    return out


def _load_centerlines(payload, radius_source: LabelVolume | None = None
                      ) -> dict[int, Centerline]:
    refs: dict[int, Centerline] = {}
    if not payload:
        return refs
    data = json.loads(payload) if isinstance(payload, (str, bytes)) else payload
    for key, item in data.items():
        c = Centerline.from_json(json.dumps(item) if not isinstance(item, str)
                                 else item)
        refs[int(key)] = c
    if radius_source is not None:
        _attach_radii(refs, radius_source)
    return refs


def _attach_radii(refs: dict[int, Centerline], vol: LabelVolume) -> None:
    """Serialized centerlines carry geometry only; measure radii from the
    best available mask so span cylinders and restamping have real scale."""
    from .centerline import _radii_along

    for cid, c in refs.items():
        mask = vol.class_mask(cid)
        if not mask.is_empty():
            c.radii = _radii_along(mask, c.nodes)


def create_app(store: SessionStore | None = None,
               snapshot_dir=None,
               size_cap: int = SIZE_CAP_VOXELS) -> FastAPI:
    app = FastAPI(title="vesselforge")
    app.state.store = store or SessionStore()
    app.state.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
    app.state.size_cap = size_cap

    if app.state.snapshot_dir is not None:
        app.state.snapshot_dir.mkdir(parents=True, exist_ok=True)
        _restore_snapshots(app)

    def _get(sid: str) -> SessionRecord:
        try:
            return app.state.store.get(sid)
        except KeyError:
            raise HTTPException(404, f"unknown session {sid}")

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        form_vol = gt_vol = None
        refs: dict[int, Centerline] = {}
        ctype = request.headers.get("content-type", "")
        try:
            if ctype.startswith("multipart/"):
                form = await request.form()

                async def read(key):
                    item = form.get(key)
                    if item is None:
                        return None
                    if hasattr(item, "read"):  # file part (any UploadFile)
                        return await item.read()
                    return str(item).encode()

                vol_bytes = await read("volume")
                if vol_bytes is None:
                    raise HTTPException(400, "missing 'volume' part")
                form_vol = _decode_upload("volume", vol_bytes,
                                          await read("volume_header"))
                gt_bytes = await read("gt")
                if gt_bytes is not None:
                    gt_vol = _decode_upload("gt", gt_bytes,
                                            await read("gt_header"))
                cl = await read("centerlines")
                if cl:
                    refs = _load_centerlines(cl)
            else:
                body = await request.json()
                form_vol = load_volume(body["volume_path"])
                if body.get("gt_path"):
                    gt_vol = load_volume(body["gt_path"])
                if body.get("centerlines_path"):
                    refs = _load_centerlines(
                        Path(body["centerlines_path"]).read_text())
                elif body.get("centerlines"):
                    refs = _load_centerlines(body["centerlines"])
        except HTTPException:
            raise
        except (VolumeIOError, VesselForgeError, KeyError, ValueError,
                json.JSONDecodeError) as e:
            raise HTTPException(400, f"malformed volume payload: {e}")
        n = int(np.prod(form_vol.dims))
        if n > app.state.size_cap:
            raise HTTPException(413, f"volume exceeds size cap "
                                     f"({n} > {app.state.size_cap} voxels)")
        if gt_vol is not None and gt_vol.dims != form_vol.dims:
            raise HTTPException(400, "gt dims do not match volume dims")
        _attach_radii(refs, gt_vol if gt_vol is not None else form_vol)
        sess = RefinementSession(form_vol, gt=gt_vol,
                                 reference_centerlines=refs)
        rec = SessionRecord(sess, form_vol.copy())
        app.state.store.put(rec)
        _snapshot(app, rec)
        return _summary(rec)

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return _summary(_get(sid))

    @app.post("/sessions/{sid}/instructions")
    def post_instruction(sid: str, body: dict):
        rec = _get(sid)
        text = body.get("text", "")
        options = body.get("options", {}) or {}
        with rec.lock:
            if options.get("normalize"):
                cfg = BridgeConfig.from_env(options.get("bridge_mode", "live"))
                try:
                    text = normalize(text, cfg, rec.session.current.label_map)
                except (UnnormalizableError, BridgeError) as e:
                    raise HTTPException(422, f"cannot normalize: {e}")
            entry = refine_step(rec.session, text)
            statuses = [o.get("status") for o in entry["outcomes"]]
            if statuses and all(s in ("error", "parse_error") for s in statuses):
                # every clause failed: drop the step, state is unchanged
                rec.session.history.pop()
                return JSONResponse(status_code=422, content={
                    "outcomes": entry["outcomes"],
                    "hash": rec.session.current.content_hash(),
                })
            _snapshot(app, rec)
            return {
                "step": len(rec.session.history) - 1,
                "commands": entry["commands"],
                "outcomes": entry["outcomes"],
                "changed_voxels": entry["changed_voxels"],
                "hash": entry["hash"],
                "metrics": entry.get("metrics"),
            }

    @app.get("/sessions/{sid}/view")
    def get_view(sid: str, kind: str = "pointcloud", stride: int = 1,
                 axis: str = "z", index: int = 0):
        rec = _get(sid)
        v = rec.session.current
        if kind == "pointcloud":
            if stride < 1:
                raise HTTPException(400, "stride must be >= 1")
            points = []
            for cid in sorted(v.voxel_counts()):
                idx = surface_voxels(v.class_mask(cid))[::stride]
                points.extend([int(a), int(b), int(c), cid]
                              for a, b, c in idx)
            return {"kind": "pointcloud", "points": points,
                    "hash": v.content_hash(),
                    "label_map": {str(k): n for k, n in v.label_map.items()}}
        if kind == "slice":
            ax = {"x": 0, "y": 1, "z": 2}.get(axis)
            if ax is None:
                raise HTTPException(400, f"bad axis {axis!r}")
            if not 0 <= index < v.dims[ax]:
                raise HTTPException(400, f"slice index {index} out of range")
            plane = np.take(v.labels, index, axis=ax)
            return {"kind": "slice", "axis": axis, "index": index,
                    "data": plane.tolist(), "hash": v.content_hash()}
        raise HTTPException(400, f"unknown view kind {kind!r}")

    @app.get("/sessions/{sid}/metrics")
    def get_metrics(sid: str):
        rec = _get(sid)
        if rec.session.gt is None:
            raise HTTPException(400, "session has no ground truth")
        report = evaluate(rec.session.current, rec.session.gt)
        return {"hash": rec.session.current.content_hash(),
                "report": report.to_dict()}

    @app.post("/sessions/{sid}/rollback")
    def rollback(sid: str, body: dict):
        rec = _get(sid)
        step = body.get("step")
        with rec.lock:
            n = len(rec.session.history)
            if not isinstance(step, int) or not 0 <= step < n:
                raise HTTPException(400, f"step must be in [0, {n})")
            restored = replay(rec.initial, rec.session.history,
                              rec.session.reference_centerlines, upto=step)
            rec.session.current = restored
            rec.session.history = rec.session.history[: step + 1]
            rec.session._derived.clear()
            _snapshot(app, rec)
            return _summary(rec)

    @app.get("/sessions/{sid}/history")
    def history(sid: str):
        rec = _get(sid)
        return {"session_id": sid,
                "hash": rec.session.current.content_hash(),
                "steps": [{k: e[k] for k in
                           ("instruction", "outcomes", "hash",
                            "changed_voxels")}
                          for e in rec.session.history]}

    return app


# ---------------------------------------------------------------------------
# optional disk snapshots

def _snapshot(app: FastAPI, rec: SessionRecord) -> None:
    root = app.state.snapshot_dir
    if root is None:
        return
    d = root / rec.session.session_id
    d.mkdir(parents=True, exist_ok=True)
    save_volume(rec.initial, d / "initial.rawl.json")
    if rec.session.gt is not None:
        save_volume(rec.session.gt, d / "gt.rawl.json")
    refs = {str(k): json.loads(c.to_json())
            for k, c in rec.session.reference_centerlines.items()}
    (d / "centerlines.json").write_text(json.dumps(refs))
    (d / "history.json").write_text(json.dumps(rec.session.history))


def _restore_snapshots(app: FastAPI) -> None:
    root = app.state.snapshot_dir
    for d in sorted(root.iterdir()):
        if not (d / "initial.rawl.json").exists():
            continue
        try:
            initial = load_volume(d / "initial.rawl.json")
            gt = (load_volume(d / "gt.rawl.json")
                  if (d / "gt.rawl.json").exists() else None)
            refs = _load_centerlines((d / "centerlines.json").read_text(),
                                     radius_source=gt or initial) \
                if (d / "centerlines.json").exists() else {}
            history = json.loads((d / "history.json").read_text()) \
                if (d / "history.json").exists() else []
            current = replay(initial, history, refs) if history \
                else initial.copy()
            sess = RefinementSession(current, gt=gt, session_id=d.name,
                                     reference_centerlines=refs,
                                     history=history)
            app.state.store.put(SessionRecord(sess, initial))
        except (VesselForgeError, json.JSONDecodeError, OSError):
            shutil.rmtree(d, ignore_errors=True)


def serve(addr: str = "127.0.0.1:8077", snapshot_dir=None) -> None:
    import uvicorn

    host, _, port = addr.rpartition(":")
    uvicorn.run(create_app(snapshot_dir=snapshot_dir),
                host=host or "127.0.0.1", port=int(port))
