"""Feature extraction, multi-template max fusion, and cross-correlation scoring.

The default extractor is a deterministic gradient-orientation backbone:
grayscale -> central-difference gradients -> magnitude binned into 8
orientation channels plus one total-magnitude channel -> 8px box-filter
downsampling -> per-cell L2 normalization. It is translation-covariant up
to the stride quantization, which is all the matching engine needs.
A file-backed extractor lets precomputed maps from a learned model drop in.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .geometry import BoundingBox, CropWindow

ORIENTATION_BINS = 8


@dataclass(frozen=True)
class FeatureMap:
    """H x W x C real grid; stride records how many patch pixels one cell covers."""

    values: np.ndarray
    stride: int = 1

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("feature values must be (height, width, channels)")
        if min(self.values.shape) <= 0:
            raise ValueError("feature dimensions must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ScoreMap:
    """Valid-correlation response grid plus the cell -> crop-pixel geometry."""

    values: np.ndarray
    stride: int

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LocalizerConfig:
    scales: tuple[float, ...] = (0.96, 1.0, 1.04)
    penalty_weight: float = 0.3
    scale_damping: float = 0.97


def crop_patch(image: np.ndarray, window: CropWindow) -> np.ndarray:
    """Resample the window to its output resolution; out-of-frame area is mean-filled.

    Output pixel j covers source span [cx - side/2 + j*s, ... + s), s = side/res.
    """
    res = window.output_resolution
    s = window.side / res
    # cv2 sample coordinates are pixel-center based, hence the -0.5 terms.
    m = np.array(
        [
            [s, 0.0, window.center_x - window.side / 2.0 + 0.5 * s - 0.5],
            [0.0, s, window.center_y - window.side / 2.0 + 0.5 * s - 0.5],
        ],
        dtype=np.float64,
    )
    mean = float(image.mean())
    return cv2.warpAffine(
        image,
        m,
        (res, res),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=mean,
    )


class GradientFeatureExtractor:
    """Orientation-binned gradient features: 8 direction channels + 1 magnitude channel."""

    def __init__(
        self,
        stride: int = 8,
        allowed_resolutions: tuple[int, ...] | None = (127, 255),
        norm_floor: float = 0.02,
    ):
        self.stride = stride
        self.channels = ORIENTATION_BINS + 1
        self.allowed_resolutions = allowed_resolutions
        self.norm_floor = norm_floor

    @property
    def descriptor(self) -> str:
        return f"grad-orient/stride{self.stride}/bins{ORIENTATION_BINS}"

    def extract(self, patch: np.ndarray) -> FeatureMap:
        if patch.ndim != 2:
            raise ValueError("expected a single-channel patch")
        h, w = patch.shape
        if self.allowed_resolutions is not None and (
            h not in self.allowed_resolutions or w not in self.allowed_resolutions
        ):
            raise ValueError(
                f"patch is {w}x{h}, expected one of {self.allowed_resolutions} per side"
            )
        img = patch.astype(np.float32) / 255.0
        gy, gx = np.gradient(img)
        mag = np.sqrt(gx * gx + gy * gy)
        theta = np.arctan2(gy, gx)  # [-pi, pi]
        bins = np.floor((theta + np.pi) / (2.0 * np.pi / ORIENTATION_BINS)).astype(np.int64)
        bins = np.clip(bins, 0, ORIENTATION_BINS - 1)

        dense = np.zeros((h, w, self.channels), dtype=np.float32)
        np.put_along_axis(dense[:, :, :ORIENTATION_BINS], bins[:, :, None], mag[:, :, None], axis=2)
        dense[:, :, ORIENTATION_BINS] = mag

        cells_y = h // self.stride
        cells_x = w // self.stride
        s = self.stride
        trimmed = dense[: cells_y * s, : cells_x * s]
        # box filter as two single-axis reductions (much faster than a fused 2-axis mean)
        rows = trimmed.reshape(cells_y, s, cells_x * s * self.channels).sum(axis=1)
        pooled = rows.reshape(cells_y, cells_x, s, self.channels).sum(axis=2) / float(s * s)

        # soft L2 normalization: textured cells come out near unit norm while
        # near-flat cells (sensor noise) keep their small magnitude instead of
        # being blown up to full-strength unit vectors
        norms = np.sqrt(np.sum(pooled * pooled, axis=2, keepdims=True) + self.norm_floor**2)
        return FeatureMap(values=(pooled / norms).astype(np.float32), stride=self.stride)


FEATURE_FILE_MAGIC = b"ATFM"
FEATURE_FILE_VERSION = 1


def write_feature_map(fm: FeatureMap, path: str | Path) -> None:
    """Binary dump: magic, version, dims, channels, stride (LE int32) + row-major LE float32."""
    with open(path, "wb") as fh:
        fh.write(FEATURE_FILE_MAGIC)
        fh.write(struct.pack("<5i", FEATURE_FILE_VERSION, fm.height, fm.width, fm.channels, fm.stride))
        fh.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())


def read_feature_map(path: str | Path) -> FeatureMap:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_FILE_MAGIC:
            raise ValueError(f"{path}: not a feature file")
        version, h, w, c, stride = struct.unpack("<5i", fh.read(20))
        if version != FEATURE_FILE_VERSION:
            raise ValueError(f"{path}: unsupported feature file version {version}")
        data = np.frombuffer(fh.read(h * w * c * 4), dtype="<f4").reshape(h, w, c)
    return FeatureMap(values=np.array(data, dtype=np.float32), stride=stride)


def patch_digest(patch: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(patch).tobytes()).hexdigest()[:16]


class PrecomputedFeatureExtractor:
    """Serves feature maps from files keyed by patch content digest.

    Pair with `dump` to cache maps from any external model, then plug this in
    wherever the gradient extractor is used.
    """

    def __init__(self, directory: str | Path, stride: int, channels: int):
        self.directory = Path(directory)
        self.stride = stride
        self.channels = channels
        self.allowed_resolutions = None

    @property
    def descriptor(self) -> str:
        return f"precomputed/{self.directory.name}/stride{self.stride}"

    def _path(self, patch: np.ndarray) -> Path:
        return self.directory / f"{patch_digest(patch)}.feat"

    def dump(self, patch: np.ndarray, fm: FeatureMap) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self._path(patch)
        write_feature_map(fm, path)
        return path

    def extract(self, patch: np.ndarray) -> FeatureMap:
        path = self._path(patch)
        if not path.exists():
            raise KeyError(f"no precomputed features for this patch (looked for {path.name})")
        return read_feature_map(path)


def fuse_templates(maps: list[FeatureMap]) -> FeatureMap:
    """Element-wise maximum over any number of same-shaped template maps."""
    if not maps:
        raise ValueError("cannot fuse an empty template list")
    shape = maps[0].values.shape
    for m in maps[1:]:
        if m.values.shape != shape:
            raise ValueError(f"template shape mismatch: {m.values.shape} vs {shape}")
    if len(maps) == 1:
        return maps[0]
    fused = maps[0].values
    for m in maps[1:]:
        fused = np.maximum(fused, m.values)
    return FeatureMap(values=fused, stride=maps[0].stride)


def cross_correlate(template: FeatureMap, search: FeatureMap) -> ScoreMap:
    """Valid sliding-window correlation summed over channels."""
    if template.channels != search.channels:
        raise ValueError(f"channel mismatch: {template.channels} vs {search.channels}")
    if template.height > search.height or template.width > search.width:
        raise ValueError("template larger than search area")
    th, tw, c = template.values.shape
    windows = np.lib.stride_tricks.sliding_window_view(search.values, (th, tw), axis=(0, 1))
    # windows: (H-th+1, W-tw+1, C, th, tw); flatten in (C, th, tw) order to match.
    oh, ow = windows.shape[0], windows.shape[1]
    lhs = np.ascontiguousarray(windows, dtype=np.float64).reshape(oh * ow, c * th * tw)
    rhs = np.ascontiguousarray(template.values.transpose(2, 0, 1), dtype=np.float64).reshape(-1)
    scores = (lhs @ rhs).reshape(oh, ow)
    return ScoreMap(values=scores, stride=search.stride)


def cosine_penalty(shape: tuple[int, int], weight: float) -> np.ndarray:
    """Multiplicative displacement penalty: 1 at the center, 1-weight at the rim."""
    hann_y = np.hanning(shape[0]) if shape[0] > 1 else np.ones(1)
    hann_x = np.hanning(shape[1]) if shape[1] > 1 else np.ones(1)
    window = np.outer(hann_y, hann_x)
    return (1.0 - weight) + weight * window


def score_to_box(
    score: ScoreMap,
    window: CropWindow,
    prior: BoundingBox,
    cfg: LocalizerConfig,
    scale: float = 1.0,
) -> tuple[BoundingBox, float]:
    """Locate the target from one response map.

    The peak of the penalized map gives the displacement from the prior
    (score cells -> crop pixels -> image pixels); `scale` is the size factor
    of the search-crop variant the map came from and is applied to the prior
    dimensions. A flat map carries no information and returns the prior.
    """
    raw = score.values
    if float(raw.max() - raw.min()) == 0.0:
        return prior, 0.0
    penalized = raw * cosine_penalty(raw.shape, cfg.penalty_weight)
    u, v = np.unravel_index(int(np.argmax(penalized)), penalized.shape)
    center_u = (raw.shape[0] - 1) / 2.0
    center_v = (raw.shape[1] - 1) / 2.0
    crop_to_image = window.side * scale / window.output_resolution
    dx = (v - center_v) * score.stride * crop_to_image
    dy = (u - center_u) * score.stride * crop_to_image
    total = float(raw.sum())
    confidence = float(raw[u, v] / total) if total > 0 else 0.0
    box = BoundingBox.from_center(prior.cx + dx, prior.cy + dy, prior.w * scale, prior.h * scale)
    return box, confidence


def localize_multiscale(
    scored: list[tuple[ScoreMap, CropWindow, float]],
    prior: BoundingBox,
    cfg: LocalizerConfig,
) -> tuple[BoundingBox, float]:
    """Pick the best (map, window, scale) variant, damping non-unit scales, then localize."""
    best = None
    best_value = -np.inf
    for score, window, scale in scored:
        raw = score.values
        if float(raw.max() - raw.min()) == 0.0:
            continue
        penalized = raw * cosine_penalty(raw.shape, cfg.penalty_weight)
        peak = float(penalized.max())
        if scale != 1.0:
            peak *= cfg.scale_damping
        if peak > best_value:
            best_value = peak
            best = (score, window, scale)
    if best is None:
        return prior, 0.0
    return score_to_box(best[0], best[1], prior, cfg, scale=best[2])
