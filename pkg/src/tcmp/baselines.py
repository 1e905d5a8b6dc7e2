"""Comparison motion models: a constant-velocity Kalman filter and the motion-free predictor.

Every predictor here, and the network-backed one in :mod:`tcmp.predictors`,
works on per-track state objects created by ``start``. ``predict`` is pure;
``observe`` and ``coast`` advance the state by one frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidInputError, NumericDegeneracyError
from .geometry import MIN_SIDE, BoundingBox


class MotionPredictor(Protocol):
    def start(self, box: BoundingBox): ...

    def predict(self, states: Sequence) -> list[BoundingBox]: ...

    def observe(self, state, box: BoundingBox) -> None: ...

    def coast(self, state, predicted: BoundingBox) -> None: ...


# -- generic linear-Gaussian steps ----------------------------------------------


def _check_covariance(P: np.ndarray, tol: float = 1e-9) -> None:
    if not np.all(np.isfinite(P)):
        raise NumericDegeneracyError("covariance has non-finite entries")
    if np.any(np.diag(P) < -tol) or np.max(np.abs(P - P.T)) > tol * max(1.0, np.max(np.abs(P))):
        raise NumericDegeneracyError("covariance is not symmetric PSD")
    if np.linalg.eigvalsh((P + P.T) / 2).min() < -tol * max(1.0, np.max(np.abs(P))):
        raise NumericDegeneracyError("covariance is not PSD")


def linear_predict(x, P, F, Q):
    """``x <- F x``, ``P <- F P F^T + Q``."""
    _check_covariance(P)
    x = F @ x
    P = F @ P @ F.T + Q
    return x, (P + P.T) / 2


def linear_update(x, P, z, H, R):
    """Standard Kalman correction; returns the posterior mean and covariance."""
    S = H @ P @ H.T + R
    if np.linalg.cond(S) > 1e12:
        raise NumericDegeneracyError("innovation covariance is singular")
    K = np.linalg.solve(S, H @ P).T
    x = x + K @ (z - H @ x)
    P = P - K @ H @ P
    return x, (P + P.T) / 2


# -- constant-velocity box filter -----------------------------------------------


@dataclass
class KalmanState:
    """State ``(cx, cy, w, h, vcx, vcy, vw, vh)`` and its covariance."""

    x: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class KalmanConfig:
    """Noise scales are fractions of the box height (SORT lineage)."""

    std_position: float = 1.0 / 20
    std_velocity: float = 1.0 / 160
    init_position_factor: float = 2.0
    init_velocity_factor: float = 10.0


def _box_to_measurement(box: BoundingBox) -> np.ndarray:
    return np.array([box.x + box.w / 2, box.y + box.h / 2, box.w, box.h])


def _measurement_to_box(z: np.ndarray) -> BoundingBox:
    w = max(float(z[2]), MIN_SIDE)
    h = max(float(z[3]), MIN_SIDE)
    return BoundingBox(float(z[0]) - w / 2, float(z[1]) - h / 2, w, h)


class KalmanPredictor:
    """Constant-velocity Kalman filter on (center, size) with linear measurements."""

    F = np.eye(8) + np.eye(8, k=4)
    H = np.eye(4, 8)

    def __init__(self, config: KalmanConfig | None = None):
        self.config = config or KalmanConfig()

    def _Q(self, h: float) -> np.ndarray:
        c = self.config
        sp, sv = c.std_position * h, c.std_velocity * h
        return np.diag([sp, sp, sp, sp, sv, sv, sv, sv]) ** 2

    def _R(self, h: float) -> np.ndarray:
        sp = self.config.std_position * h
        return np.eye(4) * sp**2

    def start(self, box: BoundingBox) -> KalmanState:
        c = self.config
        sp = c.init_position_factor * c.std_position * box.h
        sv = c.init_velocity_factor * c.std_velocity * box.h
        x = np.concatenate([_box_to_measurement(box), np.zeros(4)])
        P = np.diag([sp, sp, sp, sp, sv, sv, sv, sv]) ** 2
        return KalmanState(x, P)

    def predict_state(self, state: KalmanState) -> KalmanState:
        x, P = linear_predict(state.x, state.P, self.F, self._Q(max(state.x[3], MIN_SIDE)))
        return KalmanState(x, P)

    def predict(self, states: Sequence[KalmanState]) -> list[BoundingBox]:
        return [_measurement_to_box(self.F[:4] @ s.x) for s in states]

    def coast(self, state: KalmanState, predicted: BoundingBox | None = None) -> None:
        nxt = self.predict_state(state)
        state.x, state.P = nxt.x, nxt.P

    def observe(self, state: KalmanState, box: BoundingBox) -> None:
        nxt = self.predict_state(state)
        x, P = linear_update(nxt.x, nxt.P, _box_to_measurement(box), self.H, self._R(box.h))
        state.x, state.P = x, P


def kf_init(box: BoundingBox, config: KalmanConfig | None = None) -> KalmanState:
    return KalmanPredictor(config).start(box)


def kf_predict(state: KalmanState, config: KalmanConfig | None = None) -> tuple[BoundingBox, KalmanState]:
    nxt = KalmanPredictor(config).predict_state(state)
    return _measurement_to_box(nxt.x), nxt


def kf_update(state: KalmanState, measurement: BoundingBox, config: KalmanConfig | None = None) -> KalmanState:
    """Correct an already-predicted state with a matched box."""
    kp = KalmanPredictor(config)
    x, P = linear_update(state.x, state.P, _box_to_measurement(measurement), kp.H, kp._R(measurement.h))
    return KalmanState(x, P)


# -- motion-free ------------------------------------------------------------------


class StaticState:
    __slots__ = ("box",)

    def __init__(self, box: BoundingBox):
        self.box = box


class StaticPredictor:
    """Next box equals the last observed box."""

    def start(self, box: BoundingBox) -> StaticState:
        return StaticState(box)

    def predict(self, states: Sequence[StaticState]) -> list[BoundingBox]:
        return [s.box for s in states]

    def observe(self, state: StaticState, box: BoundingBox) -> None:
        state.box = box

    def coast(self, state: StaticState, predicted: BoundingBox | None = None) -> None:
        pass


def static_predict(history: Sequence[BoundingBox]) -> BoundingBox:
    if len(history) == 0:
        raise InvalidInputError("empty history")
    return history[-1]
