"""HTTP API and file-backed persistence for live annotation sessions.

Every mutation is appended to the session's event log and flushed before the
response goes out, so a crash after the acknowledgement loses nothing:
startup replays the logs. One writer lock per session serializes mutations;
reads take snapshots.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

import cv2
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .features import GradientFeatureExtractor
from .geometry import BoundingBox, Keyframe
from .guidance import GuidanceConfig, RankingHeadParams, load_head
from .interp import InterpConfig, export_track_csv
from .media import load_frame_sequence
from .session import (
    AnnotationEvent,
    SessionState,
    add_keyframe,
    finalize,
    remove_keyframe,
    replay_events,
    start_session,
)

logger = logging.getLogger(__name__)


class NotFound(KeyError):
    pass


class Conflict(RuntimeError):
    pass


@dataclass
class VideoCatalogEntry:
    video_id: str
    frames_dir: str
    frame_count: int
    width: int
    height: int


@dataclass
class SessionRecord:
    session_id: str
    video_id: str
    object_id: str
    status: str  # active | finalized
    events_path: str


class AnnotationService:
    """Session and video registry over a data directory; safe to restart."""

    def __init__(
        self,
        data_root: str | Path,
        interp_cfg: InterpConfig | None = None,
        guidance_cfg: GuidanceConfig | None = None,
        head_path: str | Path | None = None,
        extractor=None,
    ):
        self.root = Path(data_root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        (self.root / "exports").mkdir(parents=True, exist_ok=True)
        self.interp_cfg = interp_cfg or InterpConfig()
        self.guidance_cfg = guidance_cfg or GuidanceConfig()
        self.extractor = extractor or GradientFeatureExtractor()
        if head_path is not None:
            self.head = load_head(head_path)
        else:
            self.head = RankingHeadParams.zeros(
                channels=self.extractor.channels, frames=self.guidance_cfg.reference_count + 2
            )
        self.videos: dict[str, VideoCatalogEntry] = {}
        self.sessions: dict[str, SessionState] = {}
        self.records: dict[str, SessionRecord] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._idempotency: dict[str, dict[str, dict]] = {}
        self._load()

    # -- persistence ---------------------------------------------------------

    @property
    def _catalog_path(self) -> Path:
        return self.root / "catalog.json"

    def _save_catalog(self) -> None:
        doc = {vid: vars(entry) for vid, entry in self.videos.items()}
        self._catalog_path.write_text(json.dumps(doc, indent=1))

    def _events_path(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id / "events.jsonl"

    def _snapshot_path(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id / "snapshot.json"

    def _append_event(self, session_id: str, event: AnnotationEvent) -> None:
        path = self._events_path(session_id)
        with open(path, "a") as fh:
            fh.write(event.to_json() + "\n")
            fh.flush()

    def _write_snapshot(self, state: SessionState) -> None:
        # advisory summary next to the log; the log alone is authoritative
        snapshot = {
            "session_id": state.session_id,
            "video_id": state.video_id,
            "object_id": state.object_id,
            "status": "finalized" if state.finalized else "active",
            "suggestion": state.suggestion,
            "keyframes": [
                {"frame": kf.frame, "x": kf.box.x, "y": kf.box.y, "w": kf.box.w, "h": kf.box.h}
                for kf in state.keyframes
            ],
            "events": len(state.events),
        }
        self._snapshot_path(state.session_id).write_text(json.dumps(snapshot, indent=1))

    def _persist_new_events(self, state: SessionState, already: int) -> int:
        for event in state.events[already:]:
            self._append_event(state.session_id, event)
        self._write_snapshot(state)
        return len(state.events)

    def _load(self) -> None:
        if self._catalog_path.exists():
            doc = json.loads(self._catalog_path.read_text())
            self.videos = {vid: VideoCatalogEntry(**entry) for vid, entry in doc.items()}
        for events_file in sorted(self.root.glob("sessions/*/events.jsonl")):
            try:
                events = [AnnotationEvent.from_json(line) for line in events_file.read_text().splitlines() if line]
                start = events[0].payload
                video = self.videos[start["video_id"]]
                store = load_frame_sequence(video.frames_dir)
                state = replay_events(events, store, self.extractor, self.head)
                self.sessions[state.session_id] = state
                self.records[state.session_id] = SessionRecord(
                    session_id=state.session_id,
                    video_id=start["video_id"],
                    object_id=start["object_id"],
                    status="finalized" if state.finalized else "active",
                    events_path=str(events_file),
                )
                self._rebuild_idempotency(state)
            except Exception:
                logger.exception("failed to restore session from %s", events_file)

    def _rebuild_idempotency(self, state: SessionState) -> None:
        keys = self._idempotency.setdefault(state.session_id, {})
        for event in state.events:
            key = event.payload.get("idempotency_key")
            if key:
                keys[key] = {"suggestion": None, "changed": None, "deduplicated": True}

    # -- operations -----------------------------------------------------------

    def register_video(self, frames_dir: str) -> VideoCatalogEntry:
        store = load_frame_sequence(frames_dir)  # validates dimensions and non-emptiness
        video_id = uuid.uuid4().hex[:10]
        entry = VideoCatalogEntry(
            video_id=video_id,
            frames_dir=str(Path(frames_dir).resolve()),
            frame_count=store.frame_count,
            width=store.width,
            height=store.height,
        )
        self.videos[video_id] = entry
        self._save_catalog()
        return entry

    def _video(self, video_id: str) -> VideoCatalogEntry:
        if video_id not in self.videos:
            raise NotFound(f"unknown video {video_id}")
        return self.videos[video_id]

    def _session(self, session_id: str) -> SessionState:
        if session_id not in self.sessions:
            raise NotFound(f"unknown session {session_id}")
        return self.sessions[session_id]

    def _lock(self, session_id: str) -> threading.Lock:
        return self._locks.setdefault(session_id, threading.Lock())

    def create_session(
        self, video_id: str, object_id: str, frame: int, box: BoundingBox, seed: int = 0
    ) -> SessionState:
        video = self._video(video_id)
        store = load_frame_sequence(video.frames_dir)
        state = start_session(
            store, video_id, object_id, Keyframe(frame, box),
            self.interp_cfg, self.guidance_cfg, self.head, self.extractor, seed=seed,
        )
        session_dir = self.root / "sessions" / state.session_id
        session_dir.mkdir(parents=True, exist_ok=True)
        self._persist_new_events(state, 0)
        self.sessions[state.session_id] = state
        self.records[state.session_id] = SessionRecord(
            session_id=state.session_id,
            video_id=video_id,
            object_id=object_id,
            status="active",
            events_path=str(self._events_path(state.session_id)),
        )
        return state

    def post_keyframe(
        self, session_id: str, frame: int, box: BoundingBox, idempotency_key: str | None = None
    ) -> dict:
        with self._lock(session_id):
            state = self._session(session_id)
            if state.finalized:
                raise Conflict("session is finalized")
            keys = self._idempotency.setdefault(session_id, {})
            if idempotency_key is not None and idempotency_key in keys:
                return keys[idempotency_key]
            already = len(state.events)
            changed = add_keyframe(state, frame, box, idempotency_key=idempotency_key)
            self._persist_new_events(state, already)
            response = {
                "suggestion": state.suggestion,
                "changed": {"from": changed[0], "to": changed[-1]} if changed else None,
                "deduplicated": False,
            }
            if idempotency_key is not None:
                keys[idempotency_key] = {**response, "deduplicated": True}
            return response

    def delete_keyframe(self, session_id: str, frame: int) -> dict:
        with self._lock(session_id):
            state = self._session(session_id)
            if state.finalized:
                raise Conflict("session is finalized")
            already = len(state.events)
            changed = remove_keyframe(state, frame)
            self._persist_new_events(state, already)
            return {
                "suggestion": state.suggestion,
                "changed": {"from": changed[0], "to": changed[-1]} if changed else None,
            }

    def get_track(self, session_id: str, lo: int | None = None, hi: int | None = None) -> list[dict]:
        state = self._session(session_id)
        out = []
        for t in state.track.frames():
            if lo is not None and t < lo:
                continue
            if hi is not None and t > hi:
                continue
            b = state.track.boxes[t]
            out.append(
                {
                    "frame": t,
                    "x": b.x, "y": b.y, "w": b.w, "h": b.h,
                    "provenance": state.track.provenance[t],
                    "confidence": state.track.confidence[t],
                }
            )
        return out

    def get_frame_png(self, video_id: str, frame: int) -> bytes:
        video = self._video(video_id)
        store = load_frame_sequence(video.frames_dir)
        if not (0 <= frame < store.frame_count):
            raise NotFound(f"frame {frame} out of range")
        ok, buf = cv2.imencode(".png", store.get(frame))
        if not ok:
            raise RuntimeError("png encoding failed")
        return buf.tobytes()

    def finalize_session(self, session_id: str) -> dict:
        with self._lock(session_id):
            state = self._session(session_id)
            already = len(state.events)
            track, summary = finalize(state)
            self._persist_new_events(state, already)
            self.records[session_id].status = "finalized"
            export = self.root / "exports" / f"{session_id}.csv"
            export_track_csv(track, export)
            return {"export": str(export), **summary}


# -- HTTP layer ----------------------------------------------------------------


class BoxModel(BaseModel):
    x: float
    y: float
    w: float
    h: float

    def to_box(self) -> BoundingBox:
        return BoundingBox(self.x, self.y, self.w, self.h)


class VideoIn(BaseModel):
    frames_dir: str


class SessionIn(BaseModel):
    video_id: str
    object_id: str
    frame: int
    box: BoxModel
    seed: int = 0


class KeyframeIn(BaseModel):
    frame: int
    box: BoxModel
    idempotency_key: str | None = None


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="annotrack")

    @app.exception_handler(NotFound)
    async def _not_found(request: Request, exc: NotFound):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(Conflict)
    async def _conflict(request: Request, exc: Conflict):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(ValueError)
    async def _invalid(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.post("/videos")
    def register_video(body: VideoIn):
        entry = service.register_video(body.frames_dir)
        return vars(entry)

    @app.post("/sessions")
    def create_session(body: SessionIn):
        state = service.create_session(body.video_id, body.object_id, body.frame, body.box.to_box(), body.seed)
        return {"session_id": state.session_id, "suggestion": state.suggestion}

    @app.post("/sessions/{session_id}/keyframes")
    def post_keyframe(session_id: str, body: KeyframeIn):
        return service.post_keyframe(session_id, body.frame, body.box.to_box(), body.idempotency_key)

    @app.delete("/sessions/{session_id}/keyframes/{frame}")
    def delete_keyframe(session_id: str, frame: int):
        return service.delete_keyframe(session_id, frame)

    @app.get("/sessions/{session_id}/track")
    def get_track(
        session_id: str,
        lo: int | None = Query(None, alias="from"),
        hi: int | None = Query(None, alias="to"),
    ):
        return {"boxes": service.get_track(session_id, lo, hi)}

    @app.get("/sessions/{session_id}/suggestion")
    def get_suggestion(session_id: str):
        return {"frame": service._session(session_id).suggestion}

    @app.get("/videos/{video_id}/frames/{frame}")
    def get_frame(video_id: str, frame: int):
        return Response(content=service.get_frame_png(video_id, frame), media_type="image/png")

    @app.post("/sessions/{session_id}/finalize")
    def finalize_session(session_id: str):
        return service.finalize_session(session_id)

    return app
