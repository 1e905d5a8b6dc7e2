"""The temporal convolutional motion predictor.

K blocks of L gated dilated causal layers. Every layer contributes a 1x1
skip projection and a residual output scaled by 1/sqrt(2). The final block
output and the summed skips are blended by a learned scalar ``alpha``, passed
through a small 1x1-conv head and averaged over time to give the next-frame
motion (dx, dy, dw, dh) in normalized units.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import ndcompute as nd
from .errors import CorruptCheckpointError, InvalidInputError
from .geometry import ContextWindow, ImageGeometry, MotionDelta

INPUT_DIM = 8
OUTPUT_DIM = 4
MIX_MODES = ("alpha", "final", "skip")

CHECKPOINT_MAGIC = b"TCMP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    num_blocks: int = 2
    layers_per_block: int = 4
    channels: int = 64
    kernel_size: int = 2
    dropout_p: float = 0.2
    max_context: int = 16
    # "alpha" learns the blend; "final" / "skip" pin it to 1 / 0 for ablations
    mix_mode: str = "alpha"
    alpha_init: float = 0.5
    # per-layer dilations inside a block; None means 1, 2, 4, ... 2**(L-1)
    dilations: tuple | None = None
    input_dim: int = field(default=INPUT_DIM, init=False)
    output_dim: int = field(default=OUTPUT_DIM, init=False)

    def __post_init__(self):
        if self.num_blocks < 1 or self.layers_per_block < 1 or self.kernel_size < 1:
            raise InvalidInputError("num_blocks, layers_per_block and kernel_size must be >= 1")
        if self.channels < OUTPUT_DIM:
            raise InvalidInputError(f"channels must be >= {OUTPUT_DIM}")
        if self.max_context < 4:
            raise InvalidInputError("max_context must be >= 4")
        if not 0 <= self.dropout_p < 1:
            raise InvalidInputError("dropout_p must be in [0, 1)")
        if self.mix_mode not in MIX_MODES:
            raise InvalidInputError(f"mix_mode must be one of {MIX_MODES}")
        if self.dilations is not None:
            d = tuple(int(v) for v in self.dilations)
            if len(d) != self.layers_per_block or min(d) < 1:
                raise InvalidInputError("dilations need one positive entry per layer")
            object.__setattr__(self, "dilations", d)

    def layer_dilations(self) -> tuple:
        if self.dilations is not None:
            return self.dilations
        return tuple(2**l for l in range(self.layers_per_block))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("input_dim")
        d.pop("output_dim")
        if d["dilations"] is not None:
            d["dilations"] = list(d["dilations"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = {k: v for k, v in d.items() if k not in ("input_dim", "output_dim")}
        if d.get("dilations") is not None:
            d["dilations"] = tuple(d["dilations"])
        return cls(**d)


def receptive_field(config: NetConfig) -> int:
    """How many of the newest context entries can influence the last output position."""
    return 1 + (config.kernel_size - 1) * config.num_blocks * sum(config.layer_dilations())


def _layer_names(k: int, l: int) -> str:
    return f"block{k}.layer{l}"


@dataclass
class ForwardTrace:
    final_block: nd.Tensor
    skip_sum: nd.Tensor
    mixed: nd.Tensor
    prediction: nd.Tensor


class TcmpModel:
    """Parameters plus architecture config. Parameters are float32 unless cast."""

    def __init__(self, config: NetConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or NetConfig()
        self.params: dict[str, nd.Parameter] = {}
        self._init_params(np.random.default_rng(seed), np.dtype(dtype))

    # -- construction -------------------------------------------------------

    def _add(self, name, data, trainable=True):
        self.params[name] = nd.Parameter(data, name, trainable=trainable, dtype=self._dtype)

    def _conv(self, rng, name, c_out, c_in, taps, weight_norm=False):
        bound = 1.0 / math.sqrt(c_in * taps)
        w = rng.uniform(-bound, bound, size=(c_out, c_in, taps))
        if weight_norm:
            self._add(f"{name}.direction", w)
            self._add(f"{name}.magnitude", np.sqrt((w * w).sum(axis=(1, 2))))
        else:
            self._add(f"{name}.weight", w)
        self._add(f"{name}.bias", rng.uniform(-bound, bound, size=c_out))

    def _norm(self, name, c):
        self._add(f"{name}.gain", np.ones(c))
        self._add(f"{name}.bias", np.zeros(c))

    def _init_params(self, rng, dtype):
        self._dtype = dtype
        cfg = self.config
        c = cfg.channels
        self._conv(rng, "input", c, cfg.input_dim, 1)
        self._norm("input_norm", c)
        for k in range(cfg.num_blocks):
            for l in range(cfg.layers_per_block):
                base = _layer_names(k, l)
                self._conv(rng, f"{base}.filter", c, c, cfg.kernel_size, weight_norm=True)
                self._conv(rng, f"{base}.gate", c, c, cfg.kernel_size, weight_norm=True)
                self._conv(rng, f"{base}.skip", c, c, 1)
                self._conv(rng, f"{base}.out", c, c, 1)
                self._norm(f"{base}.norm", c)
        self._conv(rng, "head.conv1", c, c, 1)
        self._conv(rng, "head.conv2", cfg.output_dim, c, 1)
        alpha = {"alpha": cfg.alpha_init, "final": 1.0, "skip": 0.0}[cfg.mix_mode]
        self._add("alpha", np.array([alpha]), trainable=cfg.mix_mode == "alpha")
        # fixed feature scaling, identity until fitted to a training set
        self._add("scaler.in_shift", np.zeros(cfg.input_dim), trainable=False)
        self._add("scaler.in_scale", np.ones(cfg.input_dim), trainable=False)
        self._add("scaler.out_scale", np.ones(cfg.output_dim), trainable=False)

    # -- parameter access ---------------------------------------------------

    @property
    def dtype(self):
        return self._dtype

    @property
    def alpha(self) -> float:
        return float(self.params["alpha"].data[0])

    def parameters(self) -> list[nd.Parameter]:
        return list(self.params.values())

    def trainable_parameters(self) -> list[nd.Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise InvalidInputError("state dict keys do not match the model")
        for n, p in self.params.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise InvalidInputError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(self._dtype, copy=True)

    def astype(self, dtype) -> "TcmpModel":
        clone = TcmpModel.__new__(TcmpModel)
        clone.config = self.config
        clone._dtype = np.dtype(dtype)
        clone.params = {
            n: nd.Parameter(p.data.astype(dtype), n, trainable=p.trainable) for n, p in self.params.items()
        }
        return clone

    def copy(self) -> "TcmpModel":
        return self.astype(self._dtype)

    # -- forward ------------------------------------------------------------

    def _kernels(self) -> dict[str, nd.Tensor]:
        """Effective conv kernels, weight-normalized ones materialized once per pass."""
        out = {}
        for name, p in self.params.items():
            if name.endswith(".direction"):
                base = name[: -len(".direction")]
                out[f"{base}.weight"] = nd.weight_norm_reparam(p, self.params[f"{base}.magnitude"])
            elif not name.endswith(".magnitude"):
                out[name] = p
        return out

    def set_scaler(self, in_shift, in_scale, out_scale) -> None:
        """Fix the input standardization and output scale (per channel)."""
        for name, v in (("in_shift", in_shift), ("in_scale", in_scale), ("out_scale", out_scale)):
            p = self.params[f"scaler.{name}"]
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != p.shape:
                raise InvalidInputError(f"scaler.{name}: shape {arr.shape} != {p.shape}")
            if name != "in_shift" and not np.all(arr > 0):
                raise InvalidInputError(f"scaler.{name} must be positive")
            p.data = arr.astype(self._dtype)

    def _run(self, x: nd.Tensor, kern, training: bool, rng) -> ForwardTrace:
        cfg = self.config
        p_drop = cfg.dropout_p
        shift, spread = self.params["scaler.in_shift"].data, self.params["scaler.in_scale"].data
        if np.any(shift != 0) or np.any(spread != 1):
            x = nd.Tensor((x.data - shift[:, None]) / spread[:, None])

        def conv(h, name, dilation=1):
            return nd.conv1d_causal(h, kern[f"{name}.weight"], kern[f"{name}.bias"], dilation)

        def norm(h, name):
            return nd.layer_norm(h, kern[f"{name}.gain"], kern[f"{name}.bias"])

        h = conv(x, "input")
        h = nd.dropout(nd.relu_act(norm(h, "input_norm")), p_drop, training, rng)
        skip_sum = None
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        for k in range(cfg.num_blocks):
            for l, d in enumerate(cfg.layer_dilations()):
                base = _layer_names(k, l)
                gated = nd.mul(
                    nd.tanh_act(conv(h, f"{base}.filter", d)),
                    nd.sigmoid_act(conv(h, f"{base}.gate", d)),
                )
                skip = conv(gated, f"{base}.skip")
                skip_sum = skip if skip_sum is None else nd.add(skip_sum, skip)
                resid = nd.scale(nd.add(conv(gated, f"{base}.out"), h), inv_sqrt2)
                h = nd.dropout(nd.relu_act(norm(resid, f"{base}.norm")), p_drop, training, rng)
        mixed = nd.mix(h, skip_sum, kern["alpha"])
        y = conv(nd.relu_act(mixed), "head.conv1")
        y = conv(nd.relu_act(y), "head.conv2")
        pred = nd.global_avg_pool(y)
        out_scale = self.params["scaler.out_scale"].data
        if np.any(out_scale != 1):
            pred = nd.mul(pred, nd.Tensor(np.broadcast_to(out_scale, pred.shape).copy()))
        return ForwardTrace(h, skip_sum, mixed, pred)

    def forward_array(self, x: np.ndarray, training: bool = False, rng=None) -> ForwardTrace:
        """Forward on a raw channels-first array ``(8, m)`` or ``(B, 8, m)``."""
        if x.shape[-1] < 1:
            raise InvalidInputError("empty context window")
        if x.shape[-1] > self.config.max_context:
            x = x[..., -self.config.max_context :]
        return self._run(nd.Tensor(np.asarray(x, dtype=self._dtype)), self._kernels(), training, rng)


def window_array(window: ContextWindow, max_context: int) -> np.ndarray:
    """Channels-first ``(8, m)`` array, newest ``max_context`` entries only."""
    return np.ascontiguousarray(window.data[-max_context:].T)


def forward(model: TcmpModel, window: ContextWindow, training: bool = False, rng=None) -> ForwardTrace:
    if len(window) == 0:
        raise InvalidInputError("empty context window")
    return model.forward_array(window_array(window, model.config.max_context), training, rng)


def _group_by_length(windows: Sequence[ContextWindow], max_context: int) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, w in enumerate(windows):
        groups.setdefault(min(len(w), max_context), []).append(i)
    return dict(sorted(groups.items()))


def predict_batch(model: TcmpModel, windows: Sequence[ContextWindow]) -> np.ndarray:
    """Eval-mode normalized motion predictions, shape ``(N, 4)``, float64."""
    out = np.zeros((len(windows), OUTPUT_DIM))
    if not windows:
        return out
    mc = model.config.max_context
    with nd.no_grad():
        kern = model._kernels()
        for _, idx in _group_by_length(windows, mc).items():
            x = np.stack([window_array(windows[i], mc) for i in idx]).astype(model.dtype)
            out[idx] = model._run(nd.Tensor(x), kern, False, None).prediction.data
    return out


def predict_motion(model: TcmpModel, window: ContextWindow, geom: ImageGeometry | None = None) -> MotionDelta:
    """Next-frame motion. Pixel units when ``geom`` is given, normalized otherwise."""
    pred = predict_batch(model, [window])[0]
    if geom is not None:
        pred = pred * geom.scale
    return MotionDelta.from_array(pred)


def loss(model: TcmpModel, batch, training: bool = False, rng=None) -> nd.Tensor:
    """Mean over the batch of the summed squared motion error.

    ``batch`` is a sequence of ``(ContextWindow, target)`` pairs with targets
    in normalized units. Windows of different lengths run as separate groups.
    """
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    windows = [w for w, _ in batch]
    targets = np.array([np.asarray(t.as_array() if isinstance(t, MotionDelta) else t, dtype=np.float64) for _, t in batch])
    if targets.shape != (len(batch), OUTPUT_DIM):
        raise InvalidInputError(f"targets must be ({len(batch)}, {OUTPUT_DIM}), got {targets.shape}")
    mc = model.config.max_context
    kern = model._kernels()
    preds, order = [], []
    for _, idx in _group_by_length(windows, mc).items():
        x = np.stack([window_array(windows[i], mc) for i in idx]).astype(model.dtype)
        preds.append(model._run(nd.Tensor(x), kern, training, rng).prediction)
        order.extend(idx)
    pred = preds[0] if len(preds) == 1 else nd.concat(preds, axis=0)
    return nd.mse_loss(pred, targets[order].astype(model.dtype))


# -- accounting -----------------------------------------------------------------


def count_params(model: TcmpModel) -> int:
    """Network parameters; the fixed feature-scaling constants are not counted."""
    return int(sum(p.data.size for n, p in model.params.items() if not n.startswith("scaler.")))


def conv_flops(c_in: int, c_out: int, taps: int, m: int) -> int:
    """Two FLOPs per multiply-accumulate over the full kernel at every output position."""
    return 2 * c_in * c_out * taps * m


def count_flops(model: TcmpModel, m: int) -> int:
    """Forward-pass FLOPs for one window of length ``m``; convs and head only.

    Norms, activations, the residual adds and pooling are not counted.
    """
    if m < 1:
        raise InvalidInputError("context length must be >= 1")
    m = min(m, model.config.max_context)
    total = 0
    for name, p in model.params.items():
        if name.endswith(".weight") or name.endswith(".direction"):
            c_out, c_in, taps = p.shape
            total += conv_flops(c_in, c_out, taps, m)
    return total


# -- checkpoints ----------------------------------------------------------------


def _checkpoint_bytes(model: TcmpModel) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset, "trainable": p.trainable})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config": model.config.to_dict(), "params": manifest, "blob_bytes": offset},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return b"".join(
        [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(header)), header] + blobs
    )


def save_model(model: TcmpModel, path) -> None:
    with open(path, "wb") as f:
        f.write(_checkpoint_bytes(model))


def load_model(path) -> TcmpModel:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        config = NetConfig.from_dict(header["config"])
        manifest = header["params"]
        blob_bytes = int(header["blob_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    blob = raw[12 + hlen :]
    if len(blob) != blob_bytes:
        raise CorruptCheckpointError(f"{path}: expected {blob_bytes} parameter bytes, found {len(blob)}")

    model = TcmpModel(config)
    state = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        if start + 4 * count > len(blob):
            raise CorruptCheckpointError(f"{path}: parameter {entry['name']} runs past the blob")
        state[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
    try:
        model.load_state_dict(state)
    except InvalidInputError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    return model
