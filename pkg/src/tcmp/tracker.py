"""Two-stage score-split association tracker.

Each frame: split detections by score, predict every live track's box, match
high-score detections against all live tracks, then low-score detections
against the leftovers (IoU only), and spawn tracks from unmatched high-score
detections. Unmatched tracks coast on their own predictions for up to
``max_age`` frames; ``max_age=0`` deletes them immediately.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .assignment import Assignment, hungarian
from .baselines import MotionPredictor
from .errors import InvalidInputError
from .geometry import BoundingBox, iou_matrix

Similarity = Callable[[Sequence["Track"], Sequence["Detection"]], np.ndarray]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    frame: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"detection score must be in [0, 1], got {self.score}")


class TrackState(enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class Track:
    id: int
    history: list  # matched detection boxes only
    motion: object  # predictor-specific per-track state
    predicted_box: BoundingBox | None = None
    miss_count: int = 0
    state: TrackState = TrackState.ACTIVE
    frames: list = field(default_factory=list)


@dataclass(frozen=True)
class TrackerConfig:
    tau_high: float = 0.6
    tau_low: float = 0.4
    first_gate: float = 0.3
    second_gate: float = 0.4
    max_age: int = 30
    predictor: str = "tcmp"

    def __post_init__(self):
        if not 0.0 <= self.tau_low < self.tau_high <= 1.0:
            raise InvalidInputError("need 0 <= tau_low < tau_high <= 1")
        if self.max_age < 0:
            raise InvalidInputError("max_age must be >= 0")


def split_by_score(dets: Sequence[Detection], tau_high: float, tau_low: float):
    """``(high, low, discarded)`` with strict comparisons on both thresholds."""
    high, low, rest = [], [], []
    for d in dets:
        if d.score > tau_high:
            high.append(d)
        elif tau_low < d.score < tau_high:
            low.append(d)
        else:
            rest.append(d)
    return high, low, rest


def iou_similarity(tracks: Sequence[Track], dets: Sequence[Detection]) -> np.ndarray:
    return iou_matrix([t.predicted_box for t in tracks], [d.box for d in dets])


def associate(
    tracks: Sequence[Track], dets: Sequence[Detection], gate: float, similarity: Similarity = iou_similarity
) -> Assignment:
    """Hungarian on ``1 - similarity``; pairs below ``gate`` are demoted to unmatched."""
    if not tracks or not dets:
        return Assignment([], list(range(len(tracks))), list(range(len(dets))))
    sim = similarity(tracks, dets)
    raw = hungarian(1.0 - sim)
    keep = [(r, c) for r, c in raw.matches if sim[r, c] >= gate]
    used_r = {r for r, _ in keep}
    used_c = {c for _, c in keep}
    return Assignment(
        keep,
        [r for r in range(len(tracks)) if r not in used_r],
        [c for c in range(len(dets)) if c not in used_c],
    )


class Tracker:
    def __init__(self, predictor: MotionPredictor, config: TrackerConfig | None = None, similarity: Similarity = iou_similarity):
        self.predictor = predictor
        self.config = config or TrackerConfig()
        self.similarity = similarity
        self.tracks: list[Track] = []
        self.removed: list[Track] = []
        self.frame: int | None = None
        self._next_id = 1

    @property
    def live_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.state is not TrackState.REMOVED]

    def _spawn(self, det: Detection, frame: int) -> Track:
        t = Track(self._next_id, [det.box], self.predictor.start(det.box), frames=[frame])
        self._next_id += 1
        self.tracks.append(t)
        return t

    def step(self, frame: int, detections: Iterable[Detection]) -> list[tuple[int, BoundingBox, float]]:
        """Advance one frame; returns ``(track id, box, score)`` for tracks matched this frame."""
        if self.frame is not None and frame <= self.frame:
            raise InvalidInputError(f"frame {frame} is not after frame {self.frame}")
        self.frame = frame
        cfg = self.config
        high, low, _ = split_by_score(list(detections), cfg.tau_high, cfg.tau_low)

        live = self.live_tracks
        for t, box in zip(live, self.predictor.predict([t.motion for t in live])):
            t.predicted_box = box

        first = associate(live, high, cfg.first_gate, self.similarity)
        remaining = [live[i] for i in first.unmatched_rows]
        second = associate(remaining, low, cfg.second_gate, iou_similarity)

        emitted = []
        matched = [(live[r], high[c]) for r, c in first.matches] + [(remaining[r], low[c]) for r, c in second.matches]
        for track, det in matched:
            self.predictor.observe(track.motion, det.box)
            track.history.append(det.box)
            track.frames.append(frame)
            track.miss_count = 0
            track.state = TrackState.ACTIVE
            emitted.append((track.id, det.box, det.score))

        for i in second.unmatched_rows:
            track = remaining[i]
            track.miss_count += 1
            if track.miss_count > cfg.max_age:
                track.state = TrackState.REMOVED
            else:
                track.state = TrackState.LOST
                self.predictor.coast(track.motion, track.predicted_box)

        for c in first.unmatched_cols:
            self._spawn(high[c], frame)

        self.removed.extend(t for t in self.tracks if t.state is TrackState.REMOVED)
        self.tracks = [t for t in self.tracks if t.state is not TrackState.REMOVED]
        emitted.sort(key=lambda e: e[0])
        return emitted

    def run(self, detections_by_frame: dict[int, list[Detection]], frames: Iterable[int] | None = None):
        """Track a whole sequence; returns ``(frame, id, box, score)`` rows."""
        if frames is None:
            frames = range(min(detections_by_frame), max(detections_by_frame) + 1) if detections_by_frame else []
        rows = []
        for f in frames:
            for tid, box, score in self.step(f, detections_by_frame.get(f, [])):
                rows.append((f, tid, box, score))
        return rows
