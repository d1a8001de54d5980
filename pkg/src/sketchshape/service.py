"""HTTP service for generation, inspection, and interactive part editing.

Sessions are in-memory: each holds the initial generated shape plus an edit
history that replays to the current state exactly. Model parameters are
immutable after checkpoint load and shared read-only by all requests;
per-session edits are serialized by a non-blocking lock (a concurrent edit
gets 409 instead of queueing).
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field as dataclass_field

from fastapi import FastAPI, Form, UploadFile, File
from fastapi.responses import JSONResponse, PlainTextResponse

from .adjacency import DegenerateInput, dendrogram_merges, hierarchical_cluster, pseudo_adjacency
from .encoders import PartDescription, SketchRaster
from .gmm import EditError, ShapeGMM, apply_edit, edit_from_dict, shape_from_json, shape_to_dict, shape_to_json
from .mesh import extract_mesh, mesh_to_obj
from .model import Pipeline, load_checkpoint

__all__ = ["Session", "SessionStore", "create_app"]

MESH_RESOLUTION = 48  # capped for interactive latency


@dataclass
class Session:
    id: str
    initial: ShapeGMM
    current: ShapeGMM
    history: list = dataclass_field(default_factory=list)
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)

    def replay(self) -> ShapeGMM:
        shape = self.initial
        for edit in self.history:
            shape = apply_edit(shape, edit)
        return shape


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, shape: ShapeGMM) -> Session:
        session = Session(id=uuid.uuid4().hex, initial=shape, current=shape)
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)

    def delete(self, session_id: str) -> bool:
        with self._lock:
            return self._sessions.pop(session_id, None) is not None


def create_app(
    ckpt_path: str | None = None,
    pipeline: Pipeline | None = None,
    ckpt_hash: str | None = None,
    mesh_resolution: int = MESH_RESOLUTION,
) -> FastAPI:
    if ckpt_path is not None and pipeline is None:
        pipeline, ckpt_hash = load_checkpoint(ckpt_path)
    store = SessionStore()
    app = FastAPI(title="sketchshape")
    app.state.store = store
    app.state.pipeline = pipeline
    app.state.ckpt_hash = ckpt_hash

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message, "checkpoint": ckpt_hash})

    def shape_payload(session: Session, shape: ShapeGMM) -> dict:
        return {
            "session": session.id,
            "checkpoint": ckpt_hash,
            "gmm": shape_to_dict(shape),
            "mesh_obj": mesh_to_obj(extract_mesh(shape, resolution=mesh_resolution)),
        }

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoint": ckpt_hash}

    @app.post("/generate")
    async def generate(sketch: UploadFile = File(...), desc: str | None = Form(default=None)):
        if pipeline is None:
            return error(409, "no checkpoint loaded")
        data = await sketch.read()
        try:
            raster = SketchRaster.from_png_bytes(data)
        except Exception:
            return error(400, "malformed image")
        if raster.side != pipeline.config.raster_side:
            return error(422, f"raster side {raster.side} unsupported; expected {pipeline.config.raster_side}")
        description = None
        if desc:
            try:
                description = PartDescription.from_dict(json.loads(desc))
            except (ValueError, KeyError, TypeError) as exc:
                return error(422, f"malformed description: {exc}")
        try:
            shape = pipeline.infer_shape(raster, description)
        except ValueError as exc:
            return error(422, str(exc))
        session = store.create(shape)
        return shape_payload(session, shape)

    @app.get("/session/{session_id}/gmm")
    def get_gmm(session_id: str):
        session = store.get(session_id)
        if session is None:
            return error(404, "unknown session")
        return {"session": session.id, "checkpoint": ckpt_hash, "gmm": shape_to_dict(session.current)}

    @app.get("/session/{session_id}/mesh")
    def get_mesh(session_id: str):
        session = store.get(session_id)
        if session is None:
            return error(404, "unknown session")
        obj = mesh_to_obj(extract_mesh(session.current, resolution=mesh_resolution))
        return PlainTextResponse(obj, headers={"X-Checkpoint-Hash": ckpt_hash or ""})

    @app.post("/session/{session_id}/edit")
    def edit(session_id: str, payload: dict):
        session = store.get(session_id)
        if session is None:
            return error(404, "unknown session")
        if not session.lock.acquire(blocking=False):
            return error(409, "concurrent edit in progress")
        try:
            try:
                op = edit_from_dict(payload)
                new_shape = apply_edit(session.current, op)
            except (EditError, ValueError) as exc:
                return error(422, f"invalid edit: {exc}")
            session.history.append(op)
            session.current = new_shape
            return shape_payload(session, new_shape)
        finally:
            session.lock.release()

    @app.post("/session/{session_id}/undo")
    def undo(session_id: str):
        session = store.get(session_id)
        if session is None:
            return error(404, "unknown session")
        if not session.lock.acquire(blocking=False):
            return error(409, "concurrent edit in progress")
        try:
            if session.history:
                session.history.pop()
                session.current = session.replay()
            return shape_payload(session, session.current)
        finally:
            session.lock.release()

    @app.get("/session/{session_id}/clusters")
    def clusters(session_id: str, k: int = 4):
        session = store.get(session_id)
        if session is None:
            return error(404, "unknown session")
        means = session.current.means()
        try:
            adjacency = pseudo_adjacency(means)
            assign = hierarchical_cluster(adjacency, k)
            merges = dendrogram_merges(adjacency)
        except DegenerateInput as exc:
            return error(409, f"degenerate part layout: {exc}")
        return {
            "session": session.id,
            "checkpoint": ckpt_hash,
            "k": assign.k,
            "labels": list(assign.labels),
            "dendrogram": merges,
        }

    @app.delete("/session/{session_id}")
    def delete_session(session_id: str):
        if not store.delete(session_id):
            return error(404, "unknown session")
        return {"deleted": session_id, "checkpoint": ckpt_hash}

    return app
