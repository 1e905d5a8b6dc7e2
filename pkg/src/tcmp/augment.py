"""Training-time augmentation: box jitter with motion recomputation, and random truncation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import ContextWindow


@dataclass(frozen=True)
class NoiseSpec:
    mean: float = 0.0
    std: float = 0.001

    def __post_init__(self):
        if self.std < 0:
            raise InvalidInputError("noise std must be >= 0")


@dataclass(frozen=True)
class TruncationSpec:
    min_len: int = 4
    max_len: int = 16

    def __post_init__(self):
        if not 4 <= self.min_len <= self.max_len:
            raise InvalidInputError("truncation needs 4 <= min_len <= max_len")


def add_noise(windows: Sequence[ContextWindow], spec: NoiseSpec, rng: np.random.Generator) -> list[ContextWindow]:
    """Jitter every box component, then recompute motions from the jittered boxes.

    The oldest entry keeps its stored motion since its predecessor is not in
    the window.
    """
    if spec.std == 0 and spec.mean == 0:
        return list(windows)
    out = []
    for w in windows:
        boxes = w.boxes + rng.normal(spec.mean, spec.std, size=w.boxes.shape)
        data = np.empty_like(w.data)
        data[:, :4] = boxes
        data[0, 4:] = w.data[0, 4:]
        data[1:, 4:] = boxes[1:] - boxes[:-1]
        out.append(ContextWindow(data))
    return out


def random_truncate(
    windows: Sequence[ContextWindow], spec: TruncationSpec, rng: np.random.Generator
) -> tuple[list[ContextWindow], list[int]]:
    """Keep a uniformly drawn number of newest entries per window.

    Returns the new windows and the indices of windows left untouched because
    they were shorter than ``spec.min_len``.
    """
    out, skipped = [], []
    for i, w in enumerate(windows):
        n = len(w)
        if n < spec.min_len:
            out.append(w)
            skipped.append(i)
            continue
        keep = int(rng.integers(spec.min_len, min(n, spec.max_len) + 1))
        if keep == n:
            out.append(w)
            continue
        data = w.data[-keep:].copy()
        # the new oldest entry lost its predecessor
        data[0, 4:] = 0.0
        out.append(ContextWindow(data))
    return out, skipped
