"""Simulated annotation runs: a scripted annotator supplies reference boxes at
keyframes chosen by a policy, and the resulting tracks are scored.

Strategies produce the track from a fixed keyframe set (pure geometric
interpolation, sequential single-template tracking, or the full visual
interpolator). Policies choose where the next keyframe goes: uniformly
strided, guided by the ranking head, or by brute-force evaluation of every
candidate ("oracle", the upper reference).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Keyframe, SOURCE_SIMULATED, iou
from .guidance import GuidanceConfig, RankingHeadParams, build_context, sample_candidates, select_next_frame
from .interp import InterpConfig, Track, forward_track, interpolate_track, linear_track
from .media import FrameStore, GroundTruthTrack

logger = logging.getLogger(__name__)

STRATEGIES = ("linear", "tracking", "visual")
POLICIES = ("uniform", "guided", "oracle", "human-replay")


@dataclass(frozen=True)
class TimeModelParams:
    """Annotation-time accounting: watching the track plus drawing the boxes."""

    t_box: float = 5.2  # seconds per manually drawn box
    watch_multiplier: float = 1.0  # lambda
    playback_fps: float = 30.0

    def __post_init__(self):
        if self.t_box < 0 or self.watch_multiplier < 0 or self.playback_fps <= 0:
            raise ValueError("time model parameters must be non-negative (fps positive)")


def annotation_time(n_box: int, params: TimeModelParams, t_watch: float) -> float:
    """watch_multiplier * t_watch + t_box * n_box, in seconds."""
    if n_box < 0:
        raise ValueError("n_box must be >= 0")
    return params.watch_multiplier * t_watch + params.t_box * n_box


def recall_at(predicted: Track, truth: GroundTruthTrack, tau: float) -> float:
    """Fraction of predicted boxes whose IoU with the reference is strictly above tau.

    Only frames where both prediction and reference exist are counted;
    keyframe frames are included.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    common = [t for t in predicted.boxes if t in truth.boxes]
    if not common:
        raise ValueError("prediction and reference share no frames")
    hits = sum(1 for t in common if iou(predicted.boxes[t], truth.boxes[t]) > tau)
    return hits / len(common)


@dataclass
class SimulationConfig:
    strategy: str = "visual"
    policy: str = "uniform"
    stride: int = 40
    budget: int | None = 3  # manual boxes per track
    target_recall: float | None = None
    tau: float = 0.7
    seed: int = 0
    interp: InterpConfig = field(default_factory=InterpConfig)
    guidance: GuidanceConfig = field(default_factory=lambda: GuidanceConfig())
    head: RankingHeadParams | None = None
    time_model: TimeModelParams = field(default_factory=TimeModelParams)
    replay_frames: list[int] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must be in (0, 1)")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.budget is None and self.target_recall is None:
            raise ValueError("need a stop rule: budget or target_recall")


@dataclass(frozen=True)
class CurvePoint:
    boxes_per_track: float
    recall: float
    sim_time_s: float


def strategy_track(
    strategy: str,
    store: FrameStore,
    keyframes: list[Keyframe],
    frame_range: tuple[int, int],
    interp_cfg: InterpConfig,
    extractor,
    object_id: str = "",
) -> Track:
    if strategy == "linear":
        return linear_track(keyframes, frame_range, object_id)
    if strategy == "tracking":
        return forward_track(store, keyframes, frame_range, interp_cfg, extractor, object_id)
    if strategy == "visual":
        return interpolate_track(store, keyframes, frame_range, interp_cfg, extractor, object_id)
    raise ValueError(f"unknown strategy {strategy!r}")


def _next_uniform(truth: GroundTruthTrack, keyframes: list[Keyframe], stride: int) -> int | None:
    target = truth.first_frame + stride * len(keyframes)
    while target <= truth.last_frame:
        if target in truth.boxes:
            return target
        target += 1
    return None


def _candidate_frames(
    truth: GroundTruthTrack, annotated: set[int], cfg: GuidanceConfig
) -> list[int]:
    candidates = sample_candidates(annotated, truth.last_frame + 1, cfg)
    return [c for c in candidates if c in truth.boxes]


def _next_oracle(
    store: FrameStore,
    truth: GroundTruthTrack,
    keyframes: list[Keyframe],
    config: SimulationConfig,
    extractor,
    span: tuple[int, int],
) -> int | None:
    candidates = _candidate_frames(truth, {kf.frame for kf in keyframes}, config.guidance)
    if not candidates:
        return None
    best_frame, best_recall = None, -1.0
    for c in candidates:
        trial = keyframes + [Keyframe(c, truth.boxes[c], SOURCE_SIMULATED)]
        track = strategy_track(config.strategy, store, trial, span, config.interp, extractor, truth.object_id)
        r = recall_at(track, truth, config.tau)
        if r > best_recall:
            best_frame, best_recall = c, r
    return best_frame


def _next_guided(
    store: FrameStore,
    truth: GroundTruthTrack,
    keyframes: list[Keyframe],
    config: SimulationConfig,
    extractor,
    step: int,
    frame_features=None,
) -> int | None:
    candidates = _candidate_frames(truth, {kf.frame for kf in keyframes}, config.guidance)
    if not candidates:
        return None
    if config.head is None:
        raise ValueError("guided policy needs ranking-head parameters")
    context = build_context(
        store, keyframes, truth.last_frame + 1, config.guidance, extractor,
        seed=(config.seed * 1_000_003 + step) % (2**63), frame_features=frame_features,
    )
    return select_next_frame(candidates, context, config.head)


def simulate_track(
    store: FrameStore,
    truth: GroundTruthTrack,
    config: SimulationConfig,
    extractor,
) -> tuple[Track, CurvePoint, list[dict]]:
    """Run the annotate-interpolate loop against reference boxes."""
    if not truth.boxes:
        raise ValueError("reference track is empty")
    span = (truth.first_frame, truth.last_frame)
    first = Keyframe(truth.first_frame, truth.boxes[truth.first_frame], SOURCE_SIMULATED)
    keyframes = [first]
    events = [{"kind": "keyframe", "frame": first.frame, "policy": config.policy}]
    replay_queue = list(config.replay_frames or [])

    from .guidance import FrameFeatureCache

    frame_features = FrameFeatureCache(store, extractor) if config.policy == "guided" else None

    step = 0
    while True:
        if config.budget is not None and len(keyframes) >= config.budget:
            break
        if config.target_recall is not None:
            current = strategy_track(config.strategy, store, keyframes, span, config.interp, extractor, truth.object_id)
            if recall_at(current, truth, config.tau) >= config.target_recall:
                break
        if config.policy == "uniform":
            nxt = _next_uniform(truth, keyframes, config.stride)
        elif config.policy == "oracle":
            nxt = _next_oracle(store, truth, keyframes, config, extractor, span)
        elif config.policy == "guided":
            nxt = _next_guided(store, truth, keyframes, config, extractor, step, frame_features)
        else:  # human-replay
            nxt = replay_queue.pop(0) if replay_queue else None
            if nxt is not None and nxt not in truth.boxes:
                logger.warning("replayed frame %d missing from reference; skipping", nxt)
                continue
        if nxt is None or nxt in {kf.frame for kf in keyframes}:
            break
        keyframes.append(Keyframe(nxt, truth.boxes[nxt], SOURCE_SIMULATED))
        keyframes.sort(key=lambda kf: kf.frame)
        events.append({"kind": "keyframe", "frame": nxt, "policy": config.policy})
        step += 1

    track = strategy_track(config.strategy, store, keyframes, span, config.interp, extractor, truth.object_id)
    recall = recall_at(track, truth, config.tau)
    t_watch = store.frame_count / config.time_model.playback_fps
    point = CurvePoint(
        boxes_per_track=float(len(keyframes)),
        recall=recall,
        sim_time_s=annotation_time(len(keyframes), config.time_model, t_watch),
    )
    return track, point, events


@dataclass(frozen=True)
class CurveRow:
    strategy: str
    policy: str
    boxes_per_track: float
    recall: float
    sim_time_s: float


def run_benchmark(
    dataset: list[tuple[FrameStore, GroundTruthTrack]],
    configs: list[SimulationConfig],
    extractor,
) -> list[CurveRow]:
    """Average simulation results per configuration over all tracks."""
    rows = []
    for config in configs:
        points = [simulate_track(store, truth, config, extractor)[1] for store, truth in dataset]
        rows.append(
            CurveRow(
                strategy=config.strategy,
                policy=config.policy,
                boxes_per_track=float(np.mean([p.boxes_per_track for p in points])),
                recall=float(np.mean([p.recall for p in points])),
                sim_time_s=float(np.mean([p.sim_time_s for p in points])),
            )
        )
    return rows


def write_curves(rows: list[CurveRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "policy", "boxes_per_track", "recall", "sim_time_s"])
        for r in rows:
            writer.writerow([r.strategy, r.policy, f"{r.boxes_per_track:.4f}", f"{r.recall:.6f}", f"{r.sim_time_s:.3f}"])
