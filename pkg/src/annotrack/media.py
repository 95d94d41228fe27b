"""Frame stores, ground-truth track loaders, and the synthetic scene generator.

Frames are 8-bit grayscale internally; color inputs are reduced with the
usual luma weights at decode time. Frame indexing is 0-based everywhere;
the MOT reader/writer convert from/to the 1-based on-disk convention.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import yaml

from .geometry import BoundingBox, Keyframe, linear_interpolate

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".pgm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"}


class FormatError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class GroundTruthTrack:
    """Per-frame reference boxes for one object; frames where it is absent are gaps."""

    object_id: str
    boxes: dict[int, BoundingBox] = field(default_factory=dict)

    @property
    def first_frame(self) -> int:
        return min(self.boxes)

    @property
    def last_frame(self) -> int:
        return max(self.boxes)

    def mean_area(self) -> float:
        return float(np.mean([b.area for b in self.boxes.values()]))


class FrameStore:
    """Dense frame sequence with identical dimensions and lazy per-frame access."""

    def __init__(self, frame_count: int, width: int, height: int):
        self.frame_count = frame_count
        self.width = width
        self.height = height

    def get(self, index: int) -> np.ndarray:
        raise NotImplementedError

    def _check_index(self, index: int) -> None:
        if not (0 <= index < self.frame_count):
            raise IndexError(f"frame {index} outside 0..{self.frame_count - 1}")


class ArrayFrameStore(FrameStore):
    """Frames held in memory; used for synthetic scenes and tests."""

    def __init__(self, frames: np.ndarray):
        if frames.ndim != 3:
            raise ValueError("expected frames shaped (count, height, width)")
        super().__init__(frames.shape[0], frames.shape[2], frames.shape[1])
        self.frames = frames

    def get(self, index: int) -> np.ndarray:
        self._check_index(index)
        return self.frames[index]


class DirectoryFrameStore(FrameStore):
    """Frames decoded on demand from one image file each, sorted by filename."""

    def __init__(self, paths: list[Path], width: int, height: int):
        super().__init__(len(paths), width, height)
        self.paths = paths
        self._cache: dict[int, np.ndarray] = {}

    def get(self, index: int) -> np.ndarray:
        self._check_index(index)
        if index not in self._cache:
            img = cv2.imread(str(self.paths[index]), cv2.IMREAD_GRAYSCALE)
            if img is None:
                raise IOError(f"failed to decode {self.paths[index]}")
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[index] = img
        return self._cache[index]


def load_frame_sequence(directory: str | Path) -> DirectoryFrameStore:
    """Open a directory of equally sized image files as a frame sequence."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such frame directory: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise FormatError(f"no frames in {directory}")
    dims = None
    for p in paths:
        img = cv2.imread(str(p), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise FormatError(f"unreadable image {p}")
        if dims is None:
            dims = img.shape
        elif img.shape != dims:
            raise FormatError(
                f"inconsistent dimensions: {p.name} is {img.shape[1]}x{img.shape[0]}, "
                f"expected {dims[1]}x{dims[0]}"
            )
    return DirectoryFrameStore(paths, width=dims[1], height=dims[0])


def write_frame_sequence(store: FrameStore, directory: str | Path) -> None:
    """Dump every frame of a store as zero-padded PNG files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(store.frame_count):
        cv2.imwrite(str(directory / f"{i:06d}.png"), store.get(i))


# --- MOT-style multi-object CSV ---------------------------------------------


def load_mot_ground_truth(path: str | Path) -> list[GroundTruthTrack]:
    """Parse frame,id,x,y,w,h,conf,... rows into per-object tracks.

    On-disk frame numbers are 1-based; rows with non-positive box dimensions
    are skipped and counted.
    """
    tracks: dict[str, GroundTruthTrack] = {}
    skipped = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) < 6:
                raise FormatError(f"expected at least 6 comma-separated fields, got {len(parts)}", lineno)
            try:
                frame = int(float(parts[0]))
                obj = parts[1].strip()
                x, y, w, h = (float(v) for v in parts[2:6])
            except ValueError as exc:
                raise FormatError(f"unparseable row: {exc}", lineno) from None
            if w <= 0 or h <= 0:
                skipped += 1
                continue
            track = tracks.setdefault(obj, GroundTruthTrack(object_id=obj))
            track.boxes[frame - 1] = BoundingBox(x, y, w, h)
    if skipped:
        logger.warning("skipped %d rows with non-positive dimensions in %s", skipped, path)
    return list(tracks.values())


def write_mot_ground_truth(tracks: list[GroundTruthTrack], path: str | Path) -> None:
    """Write tracks in the same CSV convention the reader accepts (1-based frames)."""
    with open(path, "w") as fh:
        for track in tracks:
            for frame in sorted(track.boxes):
                b = track.boxes[frame]
                fh.write(f"{frame + 1},{track.object_id},{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f},1,-1,-1,-1\n")


def load_single_object_track(path: str | Path, object_id: str = "0") -> GroundTruthTrack:
    """Parse one x,y,w,h line per frame; all-zero lines mark the object absent."""
    track = GroundTruthTrack(object_id=object_id)
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise FormatError(f"empty track file {path}")
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.replace("\t", ",").split(",")
        if len(parts) != 4:
            raise FormatError(f"expected 4 fields, got {len(parts)}", lineno)
        try:
            x, y, w, h = (float(v) for v in parts)
        except ValueError as exc:
            raise FormatError(f"unparseable box: {exc}", lineno) from None
        if w <= 0 or h <= 0:
            continue  # absent on this frame
        track.boxes[lineno - 1] = BoundingBox(x, y, w, h)
    return track


# --- Synthetic scenes --------------------------------------------------------


@dataclass(frozen=True)
class Waypoint:
    frame: int
    box: BoundingBox


@dataclass
class SceneObject:
    object_id: str
    waypoints: list[Waypoint]
    pattern: str = "checker"  # checker | stripes | noise
    level: int = 200

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError(f"object {self.object_id} has no waypoints")
        frames = [w.frame for w in self.waypoints]
        if frames != sorted(frames) or len(set(frames)) != len(frames):
            raise ValueError(f"object {self.object_id} waypoints must be strictly increasing in time")
        for w in self.waypoints:
            if w.box.w < 1 or w.box.h < 1:
                raise ValueError(f"object {self.object_id} shrinks below 1 pixel")

    def box_at(self, frame: int) -> BoundingBox:
        wps = self.waypoints
        if frame <= wps[0].frame:
            return wps[0].box
        if frame >= wps[-1].frame:
            return wps[-1].box
        for left, right in zip(wps, wps[1:]):
            if left.frame <= frame <= right.frame:
                return linear_interpolate(
                    Keyframe(left.frame, left.box), Keyframe(right.frame, right.box), frame
                )
        raise AssertionError("unreachable")


@dataclass
class Occluder:
    box: BoundingBox
    first_frame: int = 0
    last_frame: int = 10**9
    level: int = 140
    pattern: str = "stripes"


@dataclass
class SyntheticSceneSpec:
    width: int
    height: int
    frame_count: int
    objects: list[SceneObject]
    occluders: list[Occluder] = field(default_factory=list)
    background: int = 70
    noise: float = 0.0

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")


def _pattern_tile(pattern: str, level: int, rng: np.random.Generator) -> np.ndarray:
    """64x64 texture tile, sampled in object-local coordinates so it moves rigidly."""
    n = 64
    yy, xx = np.mgrid[0:n, 0:n]
    lo = max(10, level - 70)
    if pattern == "checker":
        tile = np.where(((xx // 6) + (yy // 6)) % 2 == 0, level, lo)
    elif pattern == "stripes":
        tile = np.where(((xx + yy) // 5) % 2 == 0, level, lo)
    elif pattern == "bands":
        tile = np.where(((xx + yy) // 14) % 2 == 0, level, lo)
    elif pattern == "noise":
        tile = rng.integers(lo, min(255, level + 30), size=(n, n))
    else:
        raise ValueError(f"unknown fill pattern {pattern!r}")
    return tile.astype(np.uint8)


def _paint_box(canvas: np.ndarray, box: BoundingBox, tile: np.ndarray, anchor: tuple[float, float]) -> None:
    h_img, w_img = canvas.shape
    x0 = int(round(box.x))
    y0 = int(round(box.y))
    x1 = int(round(box.x + box.w))
    y1 = int(round(box.y + box.h))
    x0c, x1c = max(0, x0), min(w_img, x1)
    y0c, y1c = max(0, y0), min(h_img, y1)
    if x0c >= x1c or y0c >= y1c:
        return
    n = tile.shape[0]
    ys = (np.arange(y0c, y1c) - int(round(anchor[1]))) % n
    xs = (np.arange(x0c, x1c) - int(round(anchor[0]))) % n
    canvas[y0c:y1c, x0c:x1c] = tile[np.ix_(ys, xs)]


def synth_generate(spec: SyntheticSceneSpec, seed: int) -> tuple[ArrayFrameStore, list[GroundTruthTrack]]:
    """Render a scene deterministically; ground truth follows the waypoints exactly."""
    tile_rng = np.random.default_rng([seed, 0xA11CE])
    tiles = [_pattern_tile(o.pattern, o.level, tile_rng) for o in spec.objects]
    occ_tiles = [_pattern_tile(o.pattern, o.level, tile_rng) for o in spec.occluders]

    frames = np.empty((spec.frame_count, spec.height, spec.width), dtype=np.uint8)
    tracks = [GroundTruthTrack(object_id=o.object_id) for o in spec.objects]
    for t in range(spec.frame_count):
        canvas = np.full((spec.height, spec.width), spec.background, dtype=np.uint8)
        for obj, tile, track in zip(spec.objects, tiles, tracks):
            box = obj.box_at(t)
            _paint_box(canvas, box, tile, anchor=(box.x, box.y))
            track.boxes[t] = box
        for occ, tile in zip(spec.occluders, occ_tiles):
            if occ.first_frame <= t <= occ.last_frame:
                _paint_box(canvas, occ.box, tile, anchor=(occ.box.x, occ.box.y))
        if spec.noise > 0:
            noise = np.random.default_rng([seed, t]).normal(0.0, spec.noise, canvas.shape)
            canvas = np.clip(canvas.astype(np.float64) + noise, 0, 255).astype(np.uint8)
        frames[t] = canvas
    return ArrayFrameStore(frames), tracks


def _box_from_mapping(m: dict) -> BoundingBox:
    return BoundingBox(float(m["x"]), float(m["y"]), float(m["w"]), float(m["h"]))


def load_scene_spec(path: str | Path) -> SyntheticSceneSpec:
    """Read a declarative scene description (YAML); schema documented in the README."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    try:
        objects = []
        for od in doc["objects"]:
            waypoints = [Waypoint(int(w["frame"]), _box_from_mapping(w)) for w in od["waypoints"]]
            objects.append(
                SceneObject(
                    object_id=str(od.get("id", len(objects))),
                    waypoints=waypoints,
                    pattern=od.get("pattern", "checker"),
                    level=int(od.get("level", 200)),
                )
            )
        occluders = [
            Occluder(
                box=_box_from_mapping(occ),
                first_frame=int(occ.get("from", 0)),
                last_frame=int(occ.get("to", 10**9)),
                level=int(occ.get("level", 140)),
                pattern=occ.get("pattern", "stripes"),
            )
            for occ in doc.get("occluders", [])
        ]
        return SyntheticSceneSpec(
            width=int(doc["canvas"]["width"]),
            height=int(doc["canvas"]["height"]),
            frame_count=int(doc["frames"]),
            objects=objects,
            occluders=occluders,
            background=int(doc.get("background", 70)),
            noise=float(doc.get("noise", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad scene spec {path}: missing or malformed field {exc}") from None


def save_scene_spec(spec: SyntheticSceneSpec, path: str | Path) -> None:
    doc = {
        "canvas": {"width": spec.width, "height": spec.height},
        "frames": spec.frame_count,
        "background": spec.background,
        "noise": spec.noise,
        "objects": [
            {
                "id": o.object_id,
                "pattern": o.pattern,
                "level": o.level,
                "waypoints": [
                    {"frame": w.frame, "x": w.box.x, "y": w.box.y, "w": w.box.w, "h": w.box.h}
                    for w in o.waypoints
                ],
            }
            for o in spec.objects
        ],
        "occluders": [
            {
                "x": o.box.x, "y": o.box.y, "w": o.box.w, "h": o.box.h,
                "from": o.first_frame, "to": o.last_frame, "level": o.level, "pattern": o.pattern,
            }
            for o in spec.occluders
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def math_isclose_box(a: BoundingBox, b: BoundingBox, tol: float = 1e-6) -> bool:
    return all(
        math.isclose(p, q, rel_tol=0.0, abs_tol=tol)
        for p, q in ((a.x, b.x), (a.y, b.y), (a.w, b.w), (a.h, b.h))
    )
