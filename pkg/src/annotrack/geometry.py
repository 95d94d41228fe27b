"""Box arithmetic: IoU, linear interpolation, crop windows, geometric/visual blending.

Everything here is a pure function on small value types; boxes use
(left, top, width, height) in continuous pixel coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TEMPLATE_RESOLUTION = 127
SEARCH_RESOLUTION = 255

SOURCE_HUMAN = "human"
SOURCE_SIMULATED = "simulated-oracle"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; may extend beyond frame bounds."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box field {name} must be finite, got {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box dimensions must be positive, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @staticmethod
    def from_center(cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class Keyframe:
    """A (frame, box) pair supplied by the annotator (or the simulated one)."""

    frame: int
    box: BoundingBox
    source: str = SOURCE_HUMAN

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame index must be >= 0, got {self.frame}")
        if self.source not in (SOURCE_HUMAN, SOURCE_SIMULATED):
            raise ValueError(f"unknown keyframe source {self.source!r}")


@dataclass(frozen=True)
class CropWindow:
    """Square crop, resampled to output_resolution x output_resolution pixels."""

    center_x: float
    center_y: float
    side: float
    output_resolution: int

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"window side must be positive, got {self.side}")
        if self.output_resolution <= 0:
            raise ValueError(f"output resolution must be positive, got {self.output_resolution}")

    @property
    def pixels_per_output_pixel(self) -> float:
        return self.side / self.output_resolution


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes. Edge-touching boxes overlap with area 0."""
    # All areas derive from the same edge values so that iou(a, a) is exactly 1.
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    ix = min(ax2, bx2) - max(a.x, b.x)
    iy = min(ay2, by2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter
    return inter / union


def linear_interpolate(k1: Keyframe, k2: Keyframe, t: int) -> BoundingBox:
    """Box at frame t with center and dimensions interpolated linearly between k1 and k2.

    Returns the keyframe boxes exactly at the endpoints.
    """
    if k1.frame >= k2.frame:
        raise ValueError(f"keyframes out of order: {k1.frame} >= {k2.frame}")
    if not (k1.frame <= t <= k2.frame):
        raise ValueError(f"frame {t} outside [{k1.frame}, {k2.frame}]")
    if t == k1.frame:
        return k1.box
    if t == k2.frame:
        return k2.box
    alpha = (t - k1.frame) / (k2.frame - k1.frame)
    a, b = k1.box, k2.box
    cx = a.cx + alpha * (b.cx - a.cx)
    cy = a.cy + alpha * (b.cy - a.cy)
    w = a.w + alpha * (b.w - a.w)
    h = a.h + alpha * (b.h - a.h)
    return BoundingBox.from_center(cx, cy, w, h)


def template_window(box: BoundingBox, padding: float | None = None) -> CropWindow:
    """Square exemplar crop around a box.

    Side is sqrt((w+2p)(h+2p)) with context padding p = (w+h)/4; `padding`
    overrides p for tests.
    """
    p = (box.w + box.h) / 4.0 if padding is None else padding
    side = math.sqrt((box.w + 2.0 * p) * (box.h + 2.0 * p))
    return CropWindow(box.cx, box.cy, side, TEMPLATE_RESOLUTION)


def search_window(prior: BoundingBox, context_factor: float) -> CropWindow:
    """Square search crop around a prior box, context_factor times its template side."""
    if context_factor < 1:
        raise ValueError(f"context_factor must be >= 1, got {context_factor}")
    base = template_window(prior)
    return CropWindow(prior.cx, prior.cy, base.side * context_factor, SEARCH_RESOLUTION)


def blend_weight(delta_t: float, delta_cap: float) -> float:
    """Geometric-vs-visual mixing weight: quadratic falloff, zero beyond delta_cap frames."""
    if delta_t < 0:
        raise ValueError(f"delta_t must be >= 0, got {delta_t}")
    if delta_cap <= 0:
        raise ValueError(f"delta_cap must be > 0, got {delta_cap}")
    if delta_t > delta_cap:
        return 0.0
    r = delta_t / delta_cap
    return r * r - 2.0 * r + 1.0


def blend_boxes(geometric: BoundingBox, visual: BoundingBox, weight: float) -> BoundingBox:
    """Convex combination of two boxes, applied to centers and dimensions separately."""
    if not (0.0 <= weight <= 1.0):
        raise ValueError(f"weight must be in [0, 1], got {weight}")
    if weight == 1.0:
        return geometric
    if weight == 0.0:
        return visual
    inv = 1.0 - weight
    return BoundingBox.from_center(
        weight * geometric.cx + inv * visual.cx,
        weight * geometric.cy + inv * visual.cy,
        weight * geometric.w + inv * visual.w,
        weight * geometric.h + inv * visual.h,
    )
