"""Track generation from sparse keyframes.

Interior frames of a keyframe segment get their search prior from the
geometric interpolant, so they are independently computable and immune to
sequential drift; open ends are tracked frame by frame. Near keyframes the
visual prediction is blended toward the geometric one with a quadratic
falloff that reaches zero `delta_cap` frames out.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureMap, LocalizerConfig, cross_correlate, crop_patch, fuse_templates, localize_multiscale
from .geometry import (
    BoundingBox,
    Keyframe,
    blend_boxes,
    blend_weight,
    linear_interpolate,
    search_window,
    template_window,
)
from .media import FrameStore

PROV_HUMAN = "human"
PROV_VISUAL = "visual"
PROV_BLENDED = "blended"
PROV_GEOMETRIC = "geometric"


@dataclass(frozen=True)
class InterpConfig:
    max_templates: int = 2  # K
    delta_cap: int = 10  # frames; 0 disables geometric blending
    context_factor: float = 2.0
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)

    def __post_init__(self):
        if self.max_templates < 1:
            raise ValueError("max_templates must be >= 1")
        if self.delta_cap < 0:
            raise ValueError("delta_cap must be >= 0")


@dataclass
class Track:
    """Per-frame boxes for one object plus where each box came from."""

    object_id: str
    boxes: dict[int, BoundingBox] = field(default_factory=dict)
    keyframes: list[Keyframe] = field(default_factory=list)
    provenance: dict[int, str] = field(default_factory=dict)
    confidence: dict[int, float] = field(default_factory=dict)

    def merge(self, other: "Track") -> None:
        self.boxes.update(other.boxes)
        self.provenance.update(other.provenance)
        self.confidence.update(other.confidence)

    def frames(self) -> list[int]:
        return sorted(self.boxes)


def select_templates(keyframes: list[Keyframe], target_frame: int, k: int) -> list[Keyframe]:
    """The k keyframes temporally nearest the target, earlier frames winning ties."""
    if not keyframes:
        raise ValueError("no keyframes to select templates from")
    ranked = sorted(keyframes, key=lambda kf: (abs(kf.frame - target_frame), kf.frame))
    return sorted(ranked[: max(1, k)], key=lambda kf: kf.frame)


class TemplateCache:
    """Memoizes template-crop feature maps per (frame, box) within one engine run."""

    def __init__(self, store: FrameStore, extractor):
        self.store = store
        self.extractor = extractor
        self._maps: dict[tuple, FeatureMap] = {}

    def features(self, kf: Keyframe) -> FeatureMap:
        key = (kf.frame, kf.box.x, kf.box.y, kf.box.w, kf.box.h)
        if key not in self._maps:
            patch = crop_patch(self.store.get(kf.frame), template_window(kf.box))
            self._maps[key] = self.extractor.extract(patch)
        return self._maps[key]


def predict_frame(
    store: FrameStore,
    frame: int,
    templates: list[Keyframe],
    prior: BoundingBox,
    cfg: InterpConfig,
    extractor,
    cache: TemplateCache | None = None,
) -> tuple[BoundingBox, float]:
    """Match the fused templates inside a search crop around the prior."""
    if not templates:
        raise ValueError("predict_frame needs at least one template")
    if cache is None:
        cache = TemplateCache(store, extractor)
    fused = fuse_templates([cache.features(kf) for kf in templates])
    image = store.get(frame)
    base = search_window(prior, cfg.context_factor)
    scored = []
    for scale in cfg.localizer.scales:
        window = replace(base, side=base.side * scale)
        patch = crop_patch(image, window)
        score = cross_correlate(fused, extractor.extract(patch))
        scored.append((score, window, scale))
    return localize_multiscale(scored, prior, cfg.localizer)


def _blend(geometric: BoundingBox, visual: BoundingBox, delta_t: int, cfg: InterpConfig) -> tuple[BoundingBox, str]:
    w = blend_weight(delta_t, cfg.delta_cap) if cfg.delta_cap > 0 else 0.0
    box = blend_boxes(geometric, visual, w)
    return box, (PROV_BLENDED if w > 0.0 else PROV_VISUAL)


def interpolate_segment(
    store: FrameStore,
    left: Keyframe,
    right: Keyframe,
    all_keyframes: list[Keyframe],
    cfg: InterpConfig,
    extractor,
    cache: TemplateCache | None = None,
    frame_filter: set[int] | None = None,
) -> Track:
    """Predict every frame strictly between two keyframes."""
    if left.frame >= right.frame:
        raise ValueError(f"segment endpoints out of order: {left.frame} >= {right.frame}")
    if cache is None:
        cache = TemplateCache(store, extractor)
    out = Track(object_id="")
    for t in range(left.frame + 1, right.frame):
        if frame_filter is not None and t not in frame_filter:
            continue
        geometric = linear_interpolate(left, right, t)
        templates = select_templates(all_keyframes, t, cfg.max_templates)
        visual, conf = predict_frame(store, t, templates, geometric, cfg, extractor, cache)
        delta_t = min(t - left.frame, right.frame - t)
        out.boxes[t], out.provenance[t] = _blend(geometric, visual, delta_t, cfg)
        out.confidence[t] = conf
    return out


def extrapolate(
    store: FrameStore,
    keyframes: list[Keyframe],
    start: int,
    end: int,
    cfg: InterpConfig,
    extractor,
    cache: TemplateCache | None = None,
) -> Track:
    """Track frame by frame over [start, end], which must lie entirely on one
    side of all keyframes; each frame's prior is the previous output."""
    out = Track(object_id="")
    if end < start:
        return out
    frames = sorted(kf.frame for kf in keyframes)
    if start > frames[-1]:
        anchor = max(keyframes, key=lambda kf: kf.frame)
        order = range(start, end + 1)
    elif end < frames[0]:
        anchor = min(keyframes, key=lambda kf: kf.frame)
        order = range(end, start - 1, -1)
    else:
        raise ValueError(f"[{start}, {end}] overlaps the keyframe span {frames[0]}..{frames[-1]}")
    if cache is None:
        cache = TemplateCache(store, extractor)
    prior = anchor.box
    for t in order:
        templates = select_templates(keyframes, t, cfg.max_templates)
        visual, conf = predict_frame(store, t, templates, prior, cfg, extractor, cache)
        delta_t = abs(t - anchor.frame)
        out.boxes[t], out.provenance[t] = _blend(anchor.box, visual, delta_t, cfg)
        out.confidence[t] = conf
        prior = out.boxes[t]
    return out


def interpolate_track(
    store: FrameStore,
    keyframes: list[Keyframe],
    frame_range: tuple[int, int],
    cfg: InterpConfig,
    extractor,
    object_id: str = "",
) -> Track:
    """Full track over [first, last]: segments between keyframe pairs, tracked open ends,
    keyframe boxes copied verbatim."""
    first, last = frame_range
    if first > last:
        raise ValueError(f"empty frame range {frame_range}")
    kfs = sorted(keyframes, key=lambda kf: kf.frame)
    if not kfs:
        raise ValueError("cannot interpolate without keyframes")
    if not any(first <= kf.frame <= last for kf in kfs):
        raise ValueError("no keyframe inside the requested frame range")
    seen = set()
    for kf in kfs:
        if kf.frame in seen:
            raise ValueError(f"duplicate keyframe at frame {kf.frame}")
        seen.add(kf.frame)

    cache = TemplateCache(store, extractor)
    track = Track(object_id=object_id, keyframes=list(kfs))
    wanted = set(range(first, last + 1))
    for kf in kfs:
        if kf.frame in wanted:
            track.boxes[kf.frame] = kf.box
            track.provenance[kf.frame] = PROV_HUMAN
            track.confidence[kf.frame] = 1.0
    for left, right in zip(kfs, kfs[1:]):
        if right.frame <= first or left.frame >= last:
            continue
        segment = interpolate_segment(
            store, left, right, kfs, cfg, extractor, cache,
            frame_filter={t for t in range(left.frame + 1, right.frame) if t in wanted},
        )
        track.merge(segment)
    if last > kfs[-1].frame:
        track.merge(extrapolate(store, kfs, kfs[-1].frame + 1, last, cfg, extractor, cache))
    if first < kfs[0].frame:
        track.merge(extrapolate(store, kfs, first, kfs[0].frame - 1, cfg, extractor, cache))
    return track


def linear_track(
    keyframes: list[Keyframe], frame_range: tuple[int, int], object_id: str = ""
) -> Track:
    """Geometric baseline: linear interpolation between keyframes, held constant
    beyond the outermost ones."""
    first, last = frame_range
    kfs = sorted(keyframes, key=lambda kf: kf.frame)
    if not kfs:
        raise ValueError("cannot interpolate without keyframes")
    track = Track(object_id=object_id, keyframes=list(kfs))
    by_frame = {kf.frame: kf for kf in kfs}
    for t in range(first, last + 1):
        if t in by_frame:
            track.boxes[t] = by_frame[t].box
            track.provenance[t] = PROV_HUMAN
            track.confidence[t] = 1.0
            continue
        if t < kfs[0].frame:
            box = kfs[0].box
        elif t > kfs[-1].frame:
            box = kfs[-1].box
        else:
            left = max((kf for kf in kfs if kf.frame < t), key=lambda k: k.frame)
            right = min((kf for kf in kfs if kf.frame > t), key=lambda k: k.frame)
            box = linear_interpolate(left, right, t)
        track.boxes[t] = box
        track.provenance[t] = PROV_GEOMETRIC
        track.confidence[t] = 0.0
    return track


def forward_track(
    store: FrameStore,
    keyframes: list[Keyframe],
    frame_range: tuple[int, int],
    cfg: InterpConfig,
    extractor,
    object_id: str = "",
) -> Track:
    """Tracker baseline: single-template sequential prediction, restarted at each
    keyframe, with no geometric blending and no use of the right keyframe."""
    first, last = frame_range
    kfs = sorted(keyframes, key=lambda kf: kf.frame)
    if not kfs:
        raise ValueError("cannot track without keyframes")
    cache = TemplateCache(store, extractor)
    track = Track(object_id=object_id, keyframes=list(kfs))
    for kf in kfs:
        if first <= kf.frame <= last:
            track.boxes[kf.frame] = kf.box
            track.provenance[kf.frame] = PROV_HUMAN
            track.confidence[kf.frame] = 1.0
    seq_cfg = replace(cfg, max_templates=1, delta_cap=0)
    anchors = [kf for kf in kfs]
    for idx, anchor in enumerate(anchors):
        stop = anchors[idx + 1].frame if idx + 1 < len(anchors) else last + 1
        prior = anchor.box
        for t in range(anchor.frame + 1, min(stop, last + 1)):
            box, conf = predict_frame(store, t, [anchor], prior, seq_cfg, extractor, cache)
            track.boxes[t] = box
            track.provenance[t] = PROV_VISUAL
            track.confidence[t] = conf
            prior = box
    # frames before the first keyframe: track backward from it
    if first < anchors[0].frame:
        prior = anchors[0].box
        for t in range(anchors[0].frame - 1, first - 1, -1):
            box, conf = predict_frame(store, t, [anchors[0]], prior, seq_cfg, extractor, cache)
            track.boxes[t] = box
            track.provenance[t] = PROV_VISUAL
            track.confidence[t] = conf
            prior = box
    return track


def export_track_csv(track: Track, path) -> None:
    """One row per frame: frame, x, y, w, h, provenance, confidence."""
    with open(path, "w") as fh:
        fh.write("frame,x,y,w,h,provenance,confidence\n")
        for t in track.frames():
            b = track.boxes[t]
            fh.write(
                f"{t},{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f},"
                f"{track.provenance[t]},{track.confidence[t]:.6f}\n"
            )


def tracks_equal(a: Track, b: Track) -> bool:
    """Bit-level equality of boxes, provenance, and confidence."""
    if a.frames() != b.frames():
        return False
    for t in a.frames():
        if a.boxes[t] != b.boxes[t]:
            return False
        if a.provenance[t] != b.provenance[t]:
            return False
        if a.confidence[t] != b.confidence[t]:
            return False
    return True


def diff_frames(before: Track, after: Track) -> list[int]:
    """Frames whose box, provenance, or presence changed between two tracks."""
    changed = []
    for t in sorted(set(before.boxes) | set(after.boxes)):
        if t not in before.boxes or t not in after.boxes:
            changed.append(t)
        elif before.boxes[t] != after.boxes[t] or before.provenance[t] != after.provenance[t]:
            changed.append(t)
    return changed


def mean_iou(track: Track, truth_boxes: dict[int, BoundingBox]) -> float:
    from .geometry import iou as _iou

    common = [t for t in track.boxes if t in truth_boxes]
    if not common:
        return float("nan")
    return float(np.mean([_iou(track.boxes[t], truth_boxes[t]) for t in common]))
