"""Boxes, motion deltas and the normalized context windows fed to the predictor.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, matching the
MOTChallenge text format. Context entries are normalized by image size so a
model trained at one resolution can run at another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

MIN_SIDE = 1.0


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise InvalidInputError(f"non-finite box {self}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"box needs positive width and height, got {self}")

    @classmethod
    def from_array(cls, a) -> "BoundingBox":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class MotionDelta:
    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dw, self.dh)):
            raise InvalidInputError(f"non-finite motion {self}")

    @classmethod
    def from_array(cls, a) -> "MotionDelta":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=np.float64)


@dataclass(frozen=True)
class ImageGeometry:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError(f"image geometry must be positive, got {self}")

    @property
    def scale(self) -> np.ndarray:
        """Per-component divisor for (x, y, w, h)."""
        return np.array([self.width, self.height, self.width, self.height], dtype=np.float64)


class ContextWindow:
    """An ``m x 8`` matrix of normalized (box, motion) rows, oldest row first.

    Rows are stored time-major here; the network transposes to channels-first.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != 8 or data.shape[0] < 1:
            raise InvalidInputError(f"context window must be (m>=1, 8), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("context window contains non-finite values")
        self.data = data

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"ContextWindow(m={len(self)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ContextWindow) and np.array_equal(self.data, other.data)

    @property
    def entries(self) -> list[np.ndarray]:
        return [row for row in self.data]

    @property
    def boxes(self) -> np.ndarray:
        return self.data[:, :4]

    @property
    def motions(self) -> np.ndarray:
        return self.data[:, 4:]

    @property
    def last(self) -> np.ndarray:
        return self.data[-1]

    def newest(self, n: int) -> "ContextWindow":
        """The newest ``n`` entries, with the new oldest motion zeroed."""
        if n >= len(self):
            return self
        return ContextWindow.from_normalized_boxes(self.boxes[-n:])

    def is_consistent(self, tol: float = 1e-6) -> bool:
        expected = np.diff(self.boxes, axis=0)
        return bool(np.all(np.abs(self.motions[1:] - expected) <= tol))

    @classmethod
    def from_normalized_boxes(cls, boxes) -> "ContextWindow":
        """Rebuild a window from normalized boxes, first motion zero."""
        boxes = np.asarray(boxes, dtype=np.float64)
        if boxes.ndim != 2 or boxes.shape[1] != 4 or boxes.shape[0] < 1:
            raise InvalidInputError(f"need an (m>=1, 4) box array, got {boxes.shape}")
        motions = np.zeros_like(boxes)
        motions[1:] = boxes[1:] - boxes[:-1]
        return cls(np.concatenate([boxes, motions], axis=1))


def motion_of(curr: BoundingBox, prev: BoundingBox) -> MotionDelta:
    return MotionDelta(curr.x - prev.x, curr.y - prev.y, curr.w - prev.w, curr.h - prev.h)


def apply_motion(box: BoundingBox, m: MotionDelta) -> BoundingBox:
    """``box + m`` with width and height clamped to at least one pixel."""
    return BoundingBox(
        box.x + m.dx,
        box.y + m.dy,
        max(box.w + m.dw, MIN_SIDE),
        max(box.h + m.dh, MIN_SIDE),
    )


def normalize_boxes(boxes: np.ndarray, geom: ImageGeometry) -> np.ndarray:
    return np.asarray(boxes, dtype=np.float64) / geom.scale


def build_context(boxes: Sequence[BoundingBox], geom: ImageGeometry) -> ContextWindow:
    if len(boxes) == 0:
        raise InvalidInputError("cannot build a context from an empty box list")
    arr = np.array([b.as_array() for b in boxes])
    return ContextWindow.from_normalized_boxes(normalize_boxes(arr, geom))


def denormalize(entry, geom: ImageGeometry) -> BoundingBox:
    """Pixel box from a normalized context entry (only the box half is used)."""
    entry = np.asarray(entry, dtype=np.float64)
    return BoundingBox.from_array(entry[:4] * geom.scale)


def denormalize_motion(motion, geom: ImageGeometry) -> MotionDelta:
    return MotionDelta.from_array(np.asarray(motion, dtype=np.float64)[:4] * geom.scale)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a: Iterable, boxes_b: Iterable) -> np.ndarray:
    """Pairwise IoU between two collections of boxes (BoundingBox or xywh rows)."""
    a = _as_xywh(boxes_a)
    b = _as_xywh(boxes_b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0)


def _as_xywh(boxes) -> np.ndarray:
    rows = [b.as_array() if isinstance(b, BoundingBox) else np.asarray(b, dtype=np.float64) for b in boxes]
    if not rows:
        return np.zeros((0, 4))
    return np.stack(rows)
