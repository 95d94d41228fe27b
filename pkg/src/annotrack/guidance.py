"""Next-keyframe guidance: candidate sampling, pairwise ranking, aggregation, training.

Candidates drawn from the window after the last annotation are compared in
ordered pairs by a small convolutional head. Each frame enters the head as
its full-frame features plus an attention map (fused template features
correlated against the frame) that points the head at the object in
question. Per-candidate totals sum the positive pairwise scores; the top
total is suggested next.

Only the head trains (binary cross entropy, momentum descent); the feature
extractor stays frozen.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureMap, ScoreMap, crop_patch, cross_correlate, fuse_templates
from .geometry import BoundingBox, CropWindow, Keyframe, template_window
from .interp import InterpConfig, interpolate_track, select_templates
from .media import FrameStore, GroundTruthTrack, load_frame_sequence, load_scene_spec, synth_generate

logger = logging.getLogger(__name__)

AttentionMap = ScoreMap

FULL_FRAME_RESOLUTION = 255


@dataclass(frozen=True)
class GuidanceConfig:
    horizon: int = 100  # candidate interval length, frames
    candidate_count: int = 10
    reference_count: int = 3  # context frames sampled from the unannotated part
    template_budget: int = 2  # matches the interpolator's K; K-1 templates condition the head

    def __post_init__(self):
        if not (self.horizon >= self.candidate_count >= 2):
            raise ValueError("need horizon >= candidate_count >= 2")
        if self.reference_count < 1:
            raise ValueError("reference_count must be >= 1")


def sample_candidates(
    annotated_frames: set[int], video_length: int, cfg: GuidanceConfig, seed: int = 0
) -> list[int]:
    """Evenly spaced candidate frames in the window after the last annotation.

    Deterministic; the seed is accepted for interface symmetry with the
    reference-frame sampler but even spacing needs no randomness.
    """
    if not annotated_frames:
        raise ValueError("need at least one annotated frame")
    last = max(annotated_frames)
    hi = min(last + cfg.horizon, video_length - 1)
    span = hi - last
    if span <= 0:
        return []
    count = min(cfg.candidate_count, span)
    step = span / count
    out: list[int] = []
    for i in range(1, count + 1):
        f = last + int(np.floor(step * i + 0.5))
        if f not in annotated_frames and (not out or f != out[-1]):
            out.append(f)
    return out


def attention_map(templates: list[FeatureMap], frame_features: FeatureMap) -> AttentionMap:
    """Correlation of the max-fused templates against a full frame's features."""
    return cross_correlate(fuse_templates(templates), frame_features)


def conditioned_input(frame_features: FeatureMap, attention: AttentionMap) -> np.ndarray:
    """Head input for one frame: center-cropped features plus the standardized
    attention map broadcast across channels."""
    ah, aw = attention.values.shape
    fh, fw = frame_features.height, frame_features.width
    if ah > fh or aw > fw:
        raise ValueError("attention map larger than the frame features")
    oy, ox = (fh - ah) // 2, (fw - aw) // 2
    crop = frame_features.values[oy : oy + ah, ox : ox + aw, :].astype(np.float64)
    att = attention.values.astype(np.float64)
    std = float(att.std())
    att = (att - att.mean()) / (std + 1e-8)
    return crop + att[:, :, None]


def full_frame_window(store: FrameStore) -> CropWindow:
    side = float(max(store.width, store.height))
    return CropWindow(store.width / 2.0, store.height / 2.0, side, FULL_FRAME_RESOLUTION)


class FrameFeatureCache:
    """Full-frame feature maps for one store, computed once per frame."""

    def __init__(self, store: FrameStore, extractor):
        self.store = store
        self.extractor = extractor
        self.window = full_frame_window(store)
        self._maps: dict[int, FeatureMap] = {}

    def get(self, frame: int) -> FeatureMap:
        if frame not in self._maps:
            self._maps[frame] = self.extractor.extract(crop_patch(self.store.get(frame), self.window))
        return self._maps[frame]


# --- Ranking head -------------------------------------------------------------


@dataclass
class RankingHeadParams:
    """Shared 3x3 conv per frame -> global average pool -> concat -> two dense layers."""

    channels: int
    frames: int  # candidate pair + reference frames
    conv_channels: int
    hidden: int
    conv_w: np.ndarray
    conv_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @staticmethod
    def zeros(channels: int, frames: int, conv_channels: int = 16, hidden: int = 32) -> "RankingHeadParams":
        return RankingHeadParams(
            channels=channels,
            frames=frames,
            conv_channels=conv_channels,
            hidden=hidden,
            conv_w=np.zeros((conv_channels, channels, 3, 3)),
            conv_b=np.zeros(conv_channels),
            w1=np.zeros((hidden, frames * conv_channels)),
            b1=np.zeros(hidden),
            w2=np.zeros(hidden),
            b2=0.0,
        )

    @staticmethod
    def random(
        rng: np.random.Generator, channels: int, frames: int, conv_channels: int = 16, hidden: int = 32
    ) -> "RankingHeadParams":
        def init(*shape):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

        return RankingHeadParams(
            channels=channels,
            frames=frames,
            conv_channels=conv_channels,
            hidden=hidden,
            conv_w=init(conv_channels, channels, 3, 3),
            conv_b=np.zeros(conv_channels),
            w1=init(hidden, frames * conv_channels),
            b1=np.zeros(hidden),
            w2=init(hidden),
            b2=0.0,
        )

    def arrays(self) -> list[np.ndarray]:
        return [self.conv_w, self.conv_b, self.w1, self.b1, self.w2]

    def copy(self) -> "RankingHeadParams":
        return RankingHeadParams(
            self.channels, self.frames, self.conv_channels, self.hidden,
            self.conv_w.copy(), self.conv_b.copy(), self.w1.copy(), self.b1.copy(),
            self.w2.copy(), float(self.b2),
        )

    @property
    def architecture(self) -> str:
        return f"c{self.channels}-f{self.frames}-conv{self.conv_channels}-hidden{self.hidden}"

    def digest(self) -> str:
        h = hashlib.sha1(self.architecture.encode())
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        h.update(struct.pack("<d", self.b2))
        return h.hexdigest()[:16]

    def finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays()) and np.isfinite(self.b2)


HEAD_FILE_MAGIC = b"ATRH"
HEAD_FILE_VERSION = 1


def save_head(params: RankingHeadParams, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(HEAD_FILE_MAGIC)
        arch = params.architecture.encode()
        fh.write(struct.pack("<ii", HEAD_FILE_VERSION, len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<4i", params.channels, params.frames, params.conv_channels, params.hidden))
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
        fh.write(struct.pack("<f", params.b2))


def load_head(path: str | Path) -> RankingHeadParams:
    with open(path, "rb") as fh:
        if fh.read(4) != HEAD_FILE_MAGIC:
            raise ValueError(f"{path}: not a ranking-head file")
        version, arch_len = struct.unpack("<ii", fh.read(8))
        if version != HEAD_FILE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        fh.read(arch_len)
        channels, frames, conv_channels, hidden = struct.unpack("<4i", fh.read(16))
        params = RankingHeadParams.zeros(channels, frames, conv_channels, hidden)
        for a in params.arrays():
            buf = fh.read(a.size * 4)
            a[...] = np.frombuffer(buf, dtype="<f4").reshape(a.shape)
        params.b2 = float(struct.unpack("<f", fh.read(4))[0])
    return params


def _conv_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 valid convolution; returns (output, input windows) for reuse in backward."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(0, 1))
    out = np.einsum("ijchw,kchw->ijk", windows, w) + b
    return out, windows


def head_forward(params: RankingHeadParams, stack: np.ndarray) -> tuple[float, dict]:
    """Raw (pre-squash) score for a frame stack shaped (frames, A, A, channels)."""
    if stack.shape[0] != params.frames or stack.shape[3] != params.channels:
        raise ValueError(
            f"stack shape {stack.shape} incompatible with head {params.architecture}"
        )
    pooled = []
    cache: dict = {"windows": [], "h": []}
    for f in range(params.frames):
        z, windows = _conv_valid(stack[f], params.conv_w, params.conv_b)
        h = np.tanh(z)
        cache["windows"].append(windows)
        cache["h"].append(h)
        pooled.append(h.mean(axis=(0, 1)))
    u = np.concatenate(pooled)
    z1 = params.w1 @ u + params.b1
    a1 = np.tanh(z1)
    raw = float(params.w2 @ a1 + params.b2)
    cache.update(u=u, a1=a1)
    return raw, cache


def head_backward(params: RankingHeadParams, cache: dict, draw: float) -> list[np.ndarray]:
    """Gradients of draw * raw with respect to every head parameter."""
    g_w2 = draw * cache["a1"]
    g_b2 = draw
    da1 = draw * params.w2
    dz1 = da1 * (1.0 - cache["a1"] ** 2)
    g_w1 = np.outer(dz1, cache["u"])
    g_b1 = dz1
    du = params.w1.T @ dz1
    g_conv_w = np.zeros_like(params.conv_w)
    g_conv_b = np.zeros_like(params.conv_b)
    cc = params.conv_channels
    for f in range(params.frames):
        h = cache["h"][f]
        cells = h.shape[0] * h.shape[1]
        dh = np.broadcast_to(du[f * cc : (f + 1) * cc] / cells, h.shape)
        dz = dh * (1.0 - h * h)
        g_conv_w += np.einsum("ijk,ijchw->kchw", dz, cache["windows"][f])
        g_conv_b += dz.sum(axis=(0, 1))
    return [g_conv_w, g_conv_b, g_w1, g_b1, g_w2, np.asarray(g_b2)]


# --- Scoring candidates --------------------------------------------------------


@dataclass
class GuidanceContext:
    """Everything a pair comparison needs: template features, reference frames,
    and a full-frame feature source."""

    templates: list[FeatureMap]
    reference_frames: list[int]
    frame_features: FrameFeatureCache
    _attention: dict[int, AttentionMap] = field(default_factory=dict)
    _fused: FeatureMap | None = None

    def fused_templates(self) -> FeatureMap:
        if self._fused is None:
            self._fused = fuse_templates(self.templates)
        return self._fused

    def attention(self, frame: int) -> AttentionMap:
        if frame not in self._attention:
            self._attention[frame] = cross_correlate(self.fused_templates(), self.frame_features.get(frame))
        return self._attention[frame]

    def head_input(self, frame: int) -> np.ndarray:
        return conditioned_input(self.frame_features.get(frame), self.attention(frame))


def build_context(
    store: FrameStore,
    keyframes: list[Keyframe],
    video_length: int,
    cfg: GuidanceConfig,
    extractor,
    seed: int,
    frame_features: FrameFeatureCache | None = None,
) -> GuidanceContext:
    """Assemble templates from the most recent keyframes and sampled reference frames."""
    if not keyframes:
        raise ValueError("need at least one keyframe")
    last = max(kf.frame for kf in keyframes)
    k = max(1, cfg.template_budget - 1)
    template_kfs = select_templates(keyframes, last, k)
    if frame_features is None:
        frame_features = FrameFeatureCache(store, extractor)
    templates = []
    for kf in template_kfs:
        patch = crop_patch(store.get(kf.frame), template_window(kf.box))
        templates.append(extractor.extract(patch))
    suffix = np.arange(last + 1, video_length)
    rng = np.random.default_rng(seed)
    if len(suffix) == 0:
        refs = [last] * cfg.reference_count
    elif len(suffix) <= cfg.reference_count:
        refs = sorted(int(f) for f in suffix)
        refs += [refs[-1]] * (cfg.reference_count - len(refs))
    else:
        refs = sorted(int(f) for f in rng.choice(suffix, size=cfg.reference_count, replace=False))
    return GuidanceContext(templates=templates, reference_frames=refs, frame_features=frame_features)


def pair_stack(candidate_i: int, candidate_j: int, context: GuidanceContext) -> np.ndarray:
    frames = [candidate_i, candidate_j] + list(context.reference_frames)
    return np.stack([context.head_input(f) for f in frames])


def pair_score(
    candidate_i: int, candidate_j: int, context: GuidanceContext, params: RankingHeadParams
) -> float:
    """Antisymmetric comparison in [-1, 1]; positive favors candidate_i.

    Evaluated once in canonical i < j orientation and negated for the reverse.
    """
    if candidate_i == candidate_j:
        raise ValueError("cannot compare a candidate with itself")
    if candidate_i > candidate_j:
        return -pair_score(candidate_j, candidate_i, context, params)
    raw, _ = head_forward(params, pair_stack(candidate_i, candidate_j, context))
    return float(np.tanh(raw))


def compare_candidates(
    candidates: list[int], context: GuidanceContext, params: RankingHeadParams
) -> np.ndarray:
    n = len(candidates)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = pair_score(candidates[i], candidates[j], context, params)
            matrix[i, j] = s
            matrix[j, i] = -s
    return matrix


def aggregate_scores(pairwise: np.ndarray) -> np.ndarray:
    """Per-candidate totals: sum of the positive entries of each row."""
    if pairwise.ndim != 2 or pairwise.shape[0] != pairwise.shape[1]:
        raise ValueError("comparison matrix must be square")
    if np.max(np.abs(pairwise + pairwise.T)) > 1e-6:
        raise ValueError("comparison matrix is not antisymmetric")
    return np.sum(np.maximum(pairwise, 0.0), axis=1)


def select_next_frame(
    candidates: list[int], context: GuidanceContext, params: RankingHeadParams
) -> int:
    """Highest aggregate total wins; ties go to the earliest frame."""
    if not candidates:
        raise ValueError("no candidates to select from")
    if len(candidates) == 1:
        return candidates[0]
    totals = aggregate_scores(compare_candidates(candidates, context, params))
    order = sorted(range(len(candidates)), key=lambda i: (-totals[i], candidates[i]))
    return candidates[order[0]]


# --- Training data --------------------------------------------------------------


@dataclass
class TrainingPair:
    """One labeled comparison: which of two candidate keyframes leads to better
    downstream interpolation."""

    video: dict  # resolvable source, e.g. {"kind": "synth", "path": ..., "seed": ...}
    object_id: str
    template_frames: list[int]
    template_boxes: list[BoundingBox]
    candidate_a: int
    candidate_b: int
    reference_frames: list[int]
    label: int  # 1 iff candidate_a yields the higher recall
    quality_gap: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "video": self.video,
                "object_id": self.object_id,
                "template_frames": self.template_frames,
                "template_boxes": [[b.x, b.y, b.w, b.h] for b in self.template_boxes],
                "candidates": [self.candidate_a, self.candidate_b],
                "reference_frames": self.reference_frames,
                "label": self.label,
                "gap": self.quality_gap,
            }
        )

    @staticmethod
    def from_json(line: str) -> "TrainingPair":
        d = json.loads(line)
        return TrainingPair(
            video=d["video"],
            object_id=d["object_id"],
            template_frames=list(d["template_frames"]),
            template_boxes=[BoundingBox(*b) for b in d["template_boxes"]],
            candidate_a=d["candidates"][0],
            candidate_b=d["candidates"][1],
            reference_frames=list(d["reference_frames"]),
            label=int(d["label"]),
            quality_gap=float(d["gap"]),
        )


def write_training_pairs(pairs: list[TrainingPair], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(p.to_json() + "\n")


def read_training_pairs(path: str | Path) -> list[TrainingPair]:
    with open(path) as fh:
        return [TrainingPair.from_json(line) for line in fh if line.strip()]


@dataclass
class LabeledVideo:
    """A video with dense reference tracks, as consumed by pair generation."""

    source: dict
    store: FrameStore
    tracks: list[GroundTruthTrack]


def resolve_video(source: dict) -> FrameStore:
    """Rebuild the frame store a training pair refers to."""
    if source["kind"] == "synth":
        spec = load_scene_spec(source["path"])
        store, _ = synth_generate(spec, int(source.get("seed", 0)))
        return store
    if source["kind"] == "frames":
        return load_frame_sequence(source["path"])
    raise ValueError(f"unknown video source kind {source['kind']!r}")


MIN_QUALITY_GAP = 0.3
MIN_AREA_FRACTION = 0.05


def generate_training_pairs(
    dataset: list[LabeledVideo],
    interp_cfg: InterpConfig,
    cfg: GuidanceConfig,
    extractor,
    seed: int,
    contexts_per_track: int = 2,
    max_pairs_per_context: int = 8,
    tau: float = 0.7,
) -> list[TrainingPair]:
    """Label candidate pairs by actually interpolating with each candidate annotated.

    For a sampled context (initial annotation), every candidate is committed
    with its reference box, the interpolator runs over the candidate window,
    and windowed recall@tau decides which candidate of a pair is better.
    Near-ties (gap <= 0.3) and small objects (under 5% of the frame) are
    dropped; drop counts are logged.
    """
    from .simulate import recall_at  # local import to avoid a cycle

    rng = np.random.default_rng(seed)
    out: list[TrainingPair] = []
    skipped_small = 0
    skipped_gap = 0
    for video in dataset:
        frame_area = video.store.width * video.store.height
        for track in video.tracks:
            if track.mean_area() / frame_area <= MIN_AREA_FRACTION:
                skipped_small += 1
                continue
            first, last = track.first_frame, track.last_frame
            for _ in range(contexts_per_track):
                max_t0 = last - max(10, cfg.horizon // 4)
                t0 = first if max_t0 <= first else int(rng.integers(first, max_t0 + 1))
                annotated = {t0}
                candidates = sample_candidates(annotated, video.store.frame_count, cfg)
                candidates = [c for c in candidates if c in track.boxes]
                if len(candidates) < 2:
                    continue
                window_end = min(t0 + cfg.horizon, last)
                eval_frames = (t0, window_end)
                anchor = Keyframe(t0, track.boxes[t0])
                recalls: dict[int, float] = {}
                for c in candidates:
                    kfs = [anchor, Keyframe(c, track.boxes[c])]
                    predicted = interpolate_track(
                        video.store, kfs, eval_frames, interp_cfg, extractor, track.object_id
                    )
                    recalls[c] = recall_at(predicted, track, tau)
                pair_budget = max_pairs_per_context
                order = rng.permutation(
                    [(a, b) for ai, a in enumerate(candidates) for b in candidates[ai + 1 :]]
                )
                for a, b in order:
                    if pair_budget == 0:
                        break
                    a, b = int(a), int(b)
                    gap = recalls[a] - recalls[b]
                    if abs(gap) <= MIN_QUALITY_GAP:
                        skipped_gap += 1
                        continue
                    if rng.random() < 0.5:
                        a, b, gap = b, a, -gap
                    refs = build_context(
                        video.store, [anchor], video.store.frame_count, cfg, extractor,
                        seed=int(rng.integers(0, 2**31)),
                    ).reference_frames
                    out.append(
                        TrainingPair(
                            video=video.source,
                            object_id=track.object_id,
                            template_frames=[anchor.frame],
                            template_boxes=[anchor.box],
                            candidate_a=a,
                            candidate_b=b,
                            reference_frames=refs,
                            label=1 if gap > 0 else 0,
                            quality_gap=abs(gap),
                        )
                    )
                    pair_budget -= 1
    logger.info(
        "generated %d pairs (skipped: %d small-object tracks, %d near-tie pairs)",
        len(out), skipped_small, skipped_gap,
    )
    return out


@dataclass
class PairExample:
    """A training pair with its head inputs already assembled (features are frozen)."""

    stack: np.ndarray  # (frames, A, A, channels)
    label: int


def prepare_examples(
    pairs: list[TrainingPair],
    extractor,
    stores: dict[str, FrameStore] | None = None,
) -> list[PairExample]:
    """Extract and cache all features the head will see during training."""
    stores = dict(stores) if stores else {}
    caches: dict[str, FrameFeatureCache] = {}
    template_feats: dict[tuple, FeatureMap] = {}
    out = []
    for pair in pairs:
        key = json.dumps(pair.video, sort_keys=True)
        if key not in stores:
            stores[key] = resolve_video(pair.video)
        store = stores[key]
        if key not in caches:
            caches[key] = FrameFeatureCache(store, extractor)
        templates = []
        for f, b in zip(pair.template_frames, pair.template_boxes):
            tkey = (key, f, b.x, b.y, b.w, b.h)
            if tkey not in template_feats:
                patch = crop_patch(store.get(f), template_window(b))
                template_feats[tkey] = extractor.extract(patch)
            templates.append(template_feats[tkey])
        context = GuidanceContext(
            templates=templates, reference_frames=pair.reference_frames, frame_features=caches[key]
        )
        out.append(PairExample(stack=pair_stack(pair.candidate_a, pair.candidate_b, context), label=pair.label))
    return out


# --- Loss, gradient, optimizer ---------------------------------------------------


def bce_loss_and_grad(
    params: RankingHeadParams, batch: list[PairExample]
) -> tuple[float, list[np.ndarray]]:
    """Mean binary cross entropy of sigmoid(raw logit) against the labels, with
    the exact analytic gradient for every head parameter."""
    if not batch:
        raise ValueError("empty batch")
    grads = [np.zeros_like(a) for a in (*params.arrays(), np.asarray(params.b2))]
    total = 0.0
    for ex in batch:
        raw, cache = head_forward(params, ex.stack)
        # log(1 + e^raw) - y*raw, computed stably
        total += float(np.logaddexp(0.0, raw) - ex.label * raw)
        p = 1.0 / (1.0 + np.exp(-raw))
        g = head_backward(params, cache, (p - ex.label) / len(batch))
        for acc, term in zip(grads, g):
            acc += term
    return total / len(batch), grads


def head_accuracy(params: RankingHeadParams, examples: list[PairExample]) -> float:
    correct = 0
    for ex in examples:
        raw, _ = head_forward(params, ex.stack)
        correct += int((raw > 0) == bool(ex.label))
    return correct / len(examples)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 12
    seed: int = 0
    validation_fraction: float = 0.2


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


def train_head(
    examples: list[PairExample],
    init: RankingHeadParams,
    cfg: TrainConfig,
) -> tuple[RankingHeadParams, dict]:
    """Momentum descent on the pair BCE; returns the parameters with the best
    validation accuracy plus a history record."""
    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(examples))
    n_val = int(len(examples) * cfg.validation_fraction)
    val = [examples[i] for i in order[:n_val]]
    train = [examples[i] for i in order[n_val:]] or list(examples)

    params = init.copy()
    velocity = [np.zeros_like(a) for a in (*params.arrays(), np.asarray(params.b2))]
    best = params.copy()
    best_acc = head_accuracy(params, val) if val else 0.0
    history = {"loss": [], "val_accuracy": []}
    step = 0
    for _ in range(cfg.epochs):
        epoch_order = rng.permutation(len(train))
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in epoch_order[lo : lo + cfg.batch_size]]
            loss, grads = bce_loss_and_grad(params, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(step)
            slots = [*params.arrays(), None]
            for k, (g, v) in enumerate(zip(grads, velocity)):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                if slots[k] is None:
                    params.b2 = float(params.b2 + v)
                else:
                    slots[k] += v
            epoch_loss += loss
            batches += 1
            step += 1
        history["loss"].append(epoch_loss / max(1, batches))
        if val:
            acc = head_accuracy(params, val)
            history["val_accuracy"].append(acc)
            if acc > best_acc:
                best_acc = acc
                best = params.copy()
    if not val:
        best = params
    if not best.finite():
        raise TrainingDiverged(step)
    return best, history
