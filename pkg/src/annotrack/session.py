"""The interactive annotation loop for one object in one video.

Every mutation appends to an event log; replaying that log with the recorded
seeds reproduces the session bit for bit, which is what the persistence
layer leans on. The track is re-interpolated after every mutation and the
next suggested frame is recomputed from the guidance model.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field

from .geometry import BoundingBox, Keyframe, SOURCE_HUMAN
from .guidance import (
    FrameFeatureCache,
    GuidanceConfig,
    RankingHeadParams,
    build_context,
    sample_candidates,
    select_next_frame,
)
from .interp import InterpConfig, Track, diff_frames, interpolate_track
from .media import FrameStore

EVENT_SESSION_START = "session_start"
EVENT_KEYFRAME_ADDED = "keyframe_added"
EVENT_KEYFRAME_REMOVED = "keyframe_removed"
EVENT_SUGGESTION_ISSUED = "suggestion_issued"
EVENT_SUGGESTION_OVERRIDDEN = "suggestion_overridden"
EVENT_FINALIZED = "finalized"


@dataclass
class AnnotationEvent:
    sequence: int
    timestamp: float
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.sequence, "ts": self.timestamp, "kind": self.kind, "payload": self.payload}
        )

    @staticmethod
    def from_json(line: str) -> "AnnotationEvent":
        d = json.loads(line)
        return AnnotationEvent(d["seq"], d["ts"], d["kind"], d["payload"])


def _box_payload(box: BoundingBox) -> dict:
    return {"x": box.x, "y": box.y, "w": box.w, "h": box.h}


def _box_from_payload(d: dict) -> BoundingBox:
    return BoundingBox(d["x"], d["y"], d["w"], d["h"])


@dataclass
class SessionState:
    session_id: str
    video_id: str
    object_id: str
    store: FrameStore
    interp_cfg: InterpConfig
    guidance_cfg: GuidanceConfig
    head: RankingHeadParams
    extractor: object
    seed: int
    keyframes: list[Keyframe] = field(default_factory=list)
    track: Track | None = None
    suggestion: int | None = None
    events: list[AnnotationEvent] = field(default_factory=list)
    finalized: bool = False
    mutations: int = 0
    _frame_features: FrameFeatureCache | None = None

    def annotated_frames(self) -> set[int]:
        return {kf.frame for kf in self.keyframes}

    def _append(self, kind: str, payload: dict) -> AnnotationEvent:
        event = AnnotationEvent(len(self.events), time.time(), kind, payload)
        self.events.append(event)
        return event

    def _suggestion_seed(self) -> int:
        return (self.seed * 1_000_003 + self.mutations) % (2**63)

    def _frame_cache(self) -> FrameFeatureCache:
        if self._frame_features is None:
            self._frame_features = FrameFeatureCache(self.store, self.extractor)
        return self._frame_features

    def _reinterpolate(self) -> None:
        self.track = interpolate_track(
            self.store,
            self.keyframes,
            (0, self.store.frame_count - 1),
            self.interp_cfg,
            self.extractor,
            object_id=self.object_id,
        )

    def _issue_suggestion(self) -> None:
        seed = self._suggestion_seed()
        candidates = sample_candidates(
            self.annotated_frames(), self.store.frame_count, self.guidance_cfg, seed
        )
        if not candidates:
            self.suggestion = None
        else:
            context = build_context(
                self.store,
                self.keyframes,
                self.store.frame_count,
                self.guidance_cfg,
                self.extractor,
                seed=seed,
                frame_features=self._frame_cache(),
            )
            self.suggestion = select_next_frame(candidates, context, self.head)
        self._append(EVENT_SUGGESTION_ISSUED, {"frame": self.suggestion, "seed": seed})


def _check_keyframe(store: FrameStore, frame: int, box: BoundingBox) -> None:
    if not (0 <= frame < store.frame_count):
        raise ValueError(f"frame {frame} outside video range 0..{store.frame_count - 1}")
    assert box.w > 0 and box.h > 0  # enforced by the type; keeps intent obvious


def start_session(
    store: FrameStore,
    video_id: str,
    object_id: str,
    first: Keyframe,
    interp_cfg: InterpConfig,
    guidance_cfg: GuidanceConfig,
    head: RankingHeadParams,
    extractor,
    seed: int = 0,
    session_id: str | None = None,
) -> SessionState:
    """Open a session with one human keyframe; interpolates and issues a suggestion."""
    _check_keyframe(store, first.frame, first.box)
    state = SessionState(
        session_id=session_id or uuid.uuid4().hex[:12],
        video_id=video_id,
        object_id=object_id,
        store=store,
        interp_cfg=interp_cfg,
        guidance_cfg=guidance_cfg,
        head=head,
        extractor=extractor,
        seed=seed,
    )
    state.keyframes = [first]
    state._append(
        EVENT_SESSION_START,
        {
            "session_id": state.session_id,
            "video_id": video_id,
            "object_id": object_id,
            "seed": seed,
            "interp": {
                "max_templates": interp_cfg.max_templates,
                "delta_cap": interp_cfg.delta_cap,
                "context_factor": interp_cfg.context_factor,
                "scales": list(interp_cfg.localizer.scales),
                "penalty_weight": interp_cfg.localizer.penalty_weight,
                "scale_damping": interp_cfg.localizer.scale_damping,
            },
            "guidance": {
                "horizon": guidance_cfg.horizon,
                "candidate_count": guidance_cfg.candidate_count,
                "reference_count": guidance_cfg.reference_count,
                "template_budget": guidance_cfg.template_budget,
            },
            "head_digest": head.digest(),
            "first_keyframe": {"frame": first.frame, "box": _box_payload(first.box), "source": first.source},
        },
    )
    state._reinterpolate()
    state._issue_suggestion()
    return state


def add_keyframe(
    state: SessionState, frame: int, box: BoundingBox, source: str = SOURCE_HUMAN,
    idempotency_key: str | None = None,
) -> list[int]:
    """Insert a keyframe, re-interpolate, and issue a new suggestion.

    Returns the frames whose boxes changed. Annotating a frame other than the
    pending suggestion additionally logs an override event.
    """
    if state.finalized:
        raise RuntimeError("session already finalized")
    _check_keyframe(state.store, frame, box)
    if frame in state.annotated_frames():
        raise ValueError(f"frame {frame} is already a keyframe")
    before = state.track
    pending = state.suggestion
    state.keyframes = sorted(state.keyframes + [Keyframe(frame, box, source)], key=lambda kf: kf.frame)
    state.mutations += 1
    payload = {"frame": frame, "box": _box_payload(box), "source": source}
    if idempotency_key is not None:
        payload["idempotency_key"] = idempotency_key
    state._append(EVENT_KEYFRAME_ADDED, payload)
    if pending is not None and frame != pending:
        state._append(EVENT_SUGGESTION_OVERRIDDEN, {"suggested": pending, "annotated": frame})
    state._reinterpolate()
    state._issue_suggestion()
    return diff_frames(before, state.track)


def remove_keyframe(state: SessionState, frame: int) -> list[int]:
    """Drop a keyframe (undo); the sole remaining keyframe cannot be removed."""
    if state.finalized:
        raise RuntimeError("session already finalized")
    if frame not in state.annotated_frames():
        raise ValueError(f"frame {frame} is not a keyframe")
    if len(state.keyframes) == 1:
        raise ValueError("cannot remove the only keyframe")
    before = state.track
    state.keyframes = [kf for kf in state.keyframes if kf.frame != frame]
    state.mutations += 1
    state._append(EVENT_KEYFRAME_REMOVED, {"frame": frame})
    state._reinterpolate()
    state._issue_suggestion()
    return diff_frames(before, state.track)


def finalize(state: SessionState) -> tuple[Track, dict]:
    """Freeze the session and summarize it; calling again returns the same result."""
    if not state.finalized:
        kinds = [e.kind for e in state.events]
        time_by_kind: dict[str, float] = {}
        for prev, cur in zip(state.events, state.events[1:]):
            time_by_kind[cur.kind] = time_by_kind.get(cur.kind, 0.0) + (cur.timestamp - prev.timestamp)
        summary = {
            "session_id": state.session_id,
            "object_id": state.object_id,
            "n_box": len(state.keyframes),
            "keyframes_added": kinds.count(EVENT_KEYFRAME_ADDED) + 1,  # + the opening keyframe
            "keyframes_removed": kinds.count(EVENT_KEYFRAME_REMOVED),
            "suggestions_issued": kinds.count(EVENT_SUGGESTION_ISSUED),
            "suggestions_overridden": kinds.count(EVENT_SUGGESTION_OVERRIDDEN),
            "duration_s": state.events[-1].timestamp - state.events[0].timestamp,
            "time_by_kind_s": time_by_kind,
        }
        state._append(EVENT_FINALIZED, summary)
        state.finalized = True
    summary = next(e.payload for e in reversed(state.events) if e.kind == EVENT_FINALIZED)
    return state.track, summary


def replay_events(
    events: list[AnnotationEvent],
    store: FrameStore,
    extractor,
    head: RankingHeadParams,
) -> SessionState:
    """Rebuild a session from its event log using the recorded configuration."""
    if not events or events[0].kind != EVENT_SESSION_START:
        raise ValueError("event log must begin with a session_start event")
    from .features import LocalizerConfig

    start = events[0].payload
    interp_cfg = InterpConfig(
        max_templates=start["interp"]["max_templates"],
        delta_cap=start["interp"]["delta_cap"],
        context_factor=start["interp"]["context_factor"],
        localizer=LocalizerConfig(
            scales=tuple(start["interp"]["scales"]),
            penalty_weight=start["interp"]["penalty_weight"],
            scale_damping=start["interp"]["scale_damping"],
        ),
    )
    guidance_cfg = GuidanceConfig(
        horizon=start["guidance"]["horizon"],
        candidate_count=start["guidance"]["candidate_count"],
        reference_count=start["guidance"]["reference_count"],
        template_budget=start["guidance"]["template_budget"],
    )
    if head.digest() != start["head_digest"]:
        raise ValueError("replay head parameters do not match the recorded digest")
    fk = start["first_keyframe"]
    state = start_session(
        store,
        start["video_id"],
        start["object_id"],
        Keyframe(fk["frame"], _box_from_payload(fk["box"]), fk["source"]),
        interp_cfg,
        guidance_cfg,
        head,
        extractor,
        seed=start["seed"],
        session_id=start["session_id"],
    )
    for event in events[1:]:
        if event.kind == EVENT_KEYFRAME_ADDED:
            p = event.payload
            add_keyframe(
                state, p["frame"], _box_from_payload(p["box"]), p.get("source", SOURCE_HUMAN),
                idempotency_key=p.get("idempotency_key"),
            )
        elif event.kind == EVENT_KEYFRAME_REMOVED:
            remove_keyframe(state, event.payload["frame"])
        elif event.kind == EVENT_FINALIZED:
            finalize(state)
        # suggestion events are derived, not replayed
    return state
