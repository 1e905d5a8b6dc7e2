"""Network-backed per-track motion prediction and a factory over all predictor kinds."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .baselines import KalmanPredictor, MotionPredictor, StaticPredictor
from .errors import InvalidInputError
from .geometry import BoundingBox, ContextWindow, ImageGeometry, MIN_SIDE
from .net import TcmpModel, predict_batch

PREDICTOR_KINDS = ("tcmp", "kalman", "static")


class TcmpTrackState:
    """Context boxes for one track, newest last, plus the coasting bookkeeping.

    ``boxes`` mixes observations with coasted predictions; ``last_obs`` is the
    most recent matched detection and ``gap`` counts coasted frames since it.
    """

    __slots__ = ("boxes", "last_obs", "gap")

    def __init__(self, box: BoundingBox):
        self.boxes: list[np.ndarray] = [box.as_array()]
        self.last_obs = box.as_array()
        self.gap = 0


class TcmpPredictor:
    def __init__(self, model: TcmpModel, geom: ImageGeometry):
        self.model = model
        self.geom = geom
        # one extra box so the oldest kept entry still has a real motion
        self.keep = model.config.max_context + 1

    def start(self, box: BoundingBox) -> TcmpTrackState:
        return TcmpTrackState(box)

    def window(self, state: TcmpTrackState) -> ContextWindow:
        boxes = np.stack(state.boxes) / self.geom.scale
        w = ContextWindow.from_normalized_boxes(boxes)
        return ContextWindow(w.data[-self.model.config.max_context :])

    def predict(self, states: Sequence[TcmpTrackState]) -> list[BoundingBox]:
        if not states:
            return []
        motion = predict_batch(self.model, [self.window(s) for s in states]) * self.geom.scale
        out = []
        for s, mv in zip(states, motion):
            nxt = s.boxes[-1] + mv
            nxt[2:] = np.maximum(nxt[2:], MIN_SIDE)
            out.append(BoundingBox.from_array(nxt))
        return out

    def observe(self, state: TcmpTrackState, box: BoundingBox) -> None:
        obs = box.as_array()
        if state.gap:
            # replace coasted entries with a straight line from the last observation
            n = state.gap
            k = min(n, len(state.boxes))
            for i in range(k):
                j = n - k + 1 + i
                state.boxes[len(state.boxes) - k + i] = state.last_obs + (obs - state.last_obs) * j / (n + 1)
        state.boxes.append(obs)
        del state.boxes[: -self.keep]
        state.last_obs = obs
        state.gap = 0

    def coast(self, state: TcmpTrackState, predicted: BoundingBox) -> None:
        state.boxes.append(predicted.as_array())
        del state.boxes[: -self.keep]
        state.gap += 1


def make_predictor(kind: str, model: TcmpModel | None = None, geom: ImageGeometry | None = None) -> MotionPredictor:
    if kind == "tcmp":
        if model is None or geom is None:
            raise InvalidInputError("the tcmp predictor needs a model and image geometry")
        return TcmpPredictor(model, geom)
    if kind == "kalman":
        return KalmanPredictor()
    if kind == "static":
        return StaticPredictor()
    raise InvalidInputError(f"unknown predictor kind {kind!r}; expected one of {PREDICTOR_KINDS}")


def predict_next(predictor: MotionPredictor, history: Sequence[BoundingBox]) -> BoundingBox:
    """Next-frame box from a full observation history (replays the history each call)."""
    if len(history) == 0:
        raise InvalidInputError("empty history")
    state = predictor.start(history[0])
    for box in history[1:]:
        predictor.observe(state, box)
    return predictor.predict([state])[0]
