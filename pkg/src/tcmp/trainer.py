"""Window extraction, the training loop, validation and one-step prediction metrics."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ndcompute as nd
from .augment import NoiseSpec, TruncationSpec, add_noise, random_truncate
from .errors import DivergedTrainingError, InvalidInputError
from .geometry import BoundingBox, ContextWindow, ImageGeometry, iou_matrix, normalize_boxes
from .net import TcmpModel, loss as model_loss, predict_batch, save_model

log = logging.getLogger(__name__)

EVAL_CHUNK = 1024


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 10
    seed: int = 0
    max_context: int = 16
    noise_mean: float = 0.0
    noise_std: float = 0.001
    truncate: bool = True
    truncate_min_len: int = 4
    val_fraction: float = 0.1
    standardize: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if not 0 <= self.val_fraction < 1:
            raise InvalidInputError("val_fraction must be in [0, 1)")

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.noise_mean, self.noise_std)

    @property
    def truncation(self) -> TruncationSpec:
        return TruncationSpec(self.truncate_min_len, self.max_context)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidInputError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


@dataclass
class Sample:
    window: ContextWindow
    target: np.ndarray  # normalized next-frame motion
    seq_id: int
    frame: int
    geom: ImageGeometry


@dataclass
class WindowDataset:
    samples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    def subset(self, idx) -> "WindowDataset":
        return WindowDataset([self.samples[i] for i in idx])

    def split(self, val_fraction: float, seed: int) -> tuple["WindowDataset", "WindowDataset"]:
        """Hold out whole source trajectories so validation windows are unseen."""
        seqs = sorted({s.seq_id for s in self.samples})
        n_val = int(round(val_fraction * len(seqs)))
        if val_fraction == 0 or len(seqs) < 2 or n_val == 0:
            return self, WindowDataset()
        order = np.random.default_rng([seed, 0x5EED]).permutation(len(seqs))
        val_ids = {seqs[i] for i in order[:n_val]}
        train = [i for i, s in enumerate(self.samples) if s.seq_id not in val_ids]
        val = [i for i, s in enumerate(self.samples) if s.seq_id in val_ids]
        return self.subset(train), self.subset(val)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    best_epoch: int | None = None
    wall_clock_s: float = 0.0
    checkpoint: str | None = None

    @property
    def final_train_loss(self) -> float | None:
        return self.train_loss[-1] if self.train_loss else None

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def extract_windows(trajectories, max_context: int = 16) -> WindowDataset:
    """One ``(context, next motion)`` sample per frame that has a successor.

    ``trajectories`` holds ``(boxes, geom)`` pairs; ``boxes`` is a sequence of
    :class:`BoundingBox` or an ``(T, 4)`` array of consecutive-frame boxes.
    """
    samples = []
    for seq_id, (boxes, geom) in enumerate(trajectories):
        arr = np.array([b.as_array() for b in boxes]) if len(boxes) and isinstance(boxes[0], BoundingBox) else np.asarray(boxes, dtype=np.float64)
        if len(arr) < 2:
            continue
        nb = normalize_boxes(arr, geom)
        full = ContextWindow.from_normalized_boxes(nb).data
        for t in range(len(nb) - 1):
            lo = max(0, t + 1 - max_context)
            samples.append(Sample(ContextWindow(full[lo : t + 1]), nb[t + 1] - nb[t], seq_id, t, geom))
    return WindowDataset(samples)


def evaluate_loss(model: TcmpModel, dataset: WindowDataset) -> float:
    """Mean per-sample loss with no dropout and no augmentation."""
    if len(dataset) == 0:
        raise InvalidInputError("empty dataset")
    total = 0.0
    with nd.no_grad():
        for lo in range(0, len(dataset), EVAL_CHUNK):
            chunk = dataset.samples[lo : lo + EVAL_CHUNK]
            value = model_loss(model, [(s.window, s.target) for s in chunk], training=False)
            total += float(value.data) * len(chunk)
    return total / len(dataset)


SCALE_FLOOR = 1e-3


def fit_scaler(model: TcmpModel, dataset: WindowDataset, config: TrainConfig) -> None:
    """Set the model's feature scaling from the (augmented) training windows.

    Inputs are standardized per channel. Outputs are scaled by the per-component
    RMS of the targets, so a zero network output still means "no motion".
    """
    rng = np.random.default_rng([config.seed, 0x5CA1E])
    windows = add_noise([s.window for s in dataset.samples], config.noise, rng)
    rows = np.concatenate([w.data for w in windows])
    targets = np.stack([s.target for s in dataset.samples])
    in_scale = np.maximum(rows.std(axis=0), SCALE_FLOOR)
    out_scale = np.maximum(np.sqrt(np.mean(targets**2, axis=0)), SCALE_FLOOR)
    model.set_scaler(rows.mean(axis=0), in_scale, out_scale)


def _batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch])


def train(
    model: TcmpModel,
    dataset: WindowDataset,
    config: TrainConfig,
    checkpoint_path=None,
    val_dataset: WindowDataset | None = None,
) -> TrainReport:
    """Adam on shuffled, augmented mini-batches; keeps the best-validation parameters.

    Without a validation set the lowest-training-loss epoch is kept instead.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty dataset")
    if val_dataset is None:
        train_set, val_set = dataset.split(config.val_fraction, config.seed)
    else:
        train_set, val_set = dataset, val_dataset
    start = time.perf_counter()
    if config.standardize and config.epochs > 0:
        fit_scaler(model, train_set, config)
    report = TrainReport()
    opt = nd.AdamState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    params = model.trainable_parameters()
    best_state, best_score = model.state_dict(), math.inf
    n = len(train_set)
    batch_index = 0

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        running = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            rng = _batch_rng(config.seed, epoch, b)
            chunk = [train_set.samples[i] for i in order[lo : lo + config.batch_size]]
            windows = add_noise([s.window for s in chunk], config.noise, rng)
            if config.truncate:
                windows, _ = random_truncate(windows, config.truncation, rng)
            model.zero_grad()
            value = model_loss(model, list(zip(windows, [s.target for s in chunk])), training=True, rng=rng)
            lv = float(value.data)
            if not math.isfinite(lv):
                raise DivergedTrainingError(f"non-finite loss at epoch {epoch} batch {b}", batch_index)
            nd.backward(value)
            nd.adam_step(params, opt)
            running += lv * len(chunk)
            batch_index += 1
        train_loss = running / n
        report.train_loss.append(train_loss)
        report.alpha.append(model.alpha)
        score = train_loss
        if len(val_set):
            score = evaluate_loss(model, val_set)
            report.val_loss.append(score)
        if not math.isfinite(model.alpha):
            raise DivergedTrainingError(f"alpha diverged at epoch {epoch}", batch_index)
        if score < best_score:
            best_score, best_state = score, model.state_dict()
            report.best_epoch = epoch
        log.info("epoch %d train %.3e val %s alpha %.4f", epoch, train_loss, report.val_loss[-1:] or "-", model.alpha)

    model.load_state_dict(best_state)
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
        report.checkpoint = str(checkpoint_path)
    report.wall_clock_s = time.perf_counter() - start
    return report


def evaluate_prediction(predictor, dataset: WindowDataset) -> dict:
    """One-step errors in pixels: center displacement, box IoU, per-component RMSE.

    ``predictor`` is a :class:`TcmpModel` or a callable mapping a list of
    windows to an ``(N, 4)`` array of normalized motions.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty dataset")
    windows = [s.window for s in dataset.samples]
    fn: Callable = (lambda ws: predict_batch(predictor, ws)) if isinstance(predictor, TcmpModel) else predictor
    pred = np.asarray(fn(windows), dtype=np.float64)
    scale = np.stack([s.geom.scale for s in dataset.samples])
    last = np.stack([w.last[:4] for w in windows]) * scale
    true_next = last + np.stack([s.target for s in dataset.samples]) * scale
    pred_next = last + pred * scale
    pred_next[:, 2:] = np.maximum(pred_next[:, 2:], 1.0)
    return prediction_errors(pred_next, true_next)


def prediction_errors(pred_boxes: np.ndarray, true_boxes: np.ndarray) -> dict:
    """ADE of box centers, mean IoU and RMSE per (x, y, w, h) for paired pixel boxes."""

    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    true_boxes = np.asarray(true_boxes, dtype=np.float64)
    pc = pred_boxes[:, :2] + pred_boxes[:, 2:] / 2
    tc = true_boxes[:, :2] + true_boxes[:, 2:] / 2
    ade = float(np.mean(np.linalg.norm(pc - tc, axis=1)))
    ious = [float(iou_matrix([p], [t])[0, 0]) for p, t in zip(pred_boxes, true_boxes)]
    rmse = np.sqrt(np.mean((pred_boxes - true_boxes) ** 2, axis=0))
    return {
        "ade_center": ade,
        "box_iou_mean": float(np.mean(ious)),
        "rmse": {k: float(v) for k, v in zip("xywh", rmse)},
    }
