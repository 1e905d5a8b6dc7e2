"""A small reverse-mode autodiff core over numpy arrays.

Only the operations the motion network needs are provided. Tensors are
channels-first: ``(C, m)`` for one sequence or ``(B, C, m)`` for a batch of
equal-length sequences. Each op records a closure that pushes the output
gradient back to its inputs; :func:`backward` replays them in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidStateError, NumericDegeneracyError

LAYER_NORM_EPS = 1e-5

_state = {"grad": True, "debug": False}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def set_debug(enabled: bool) -> None:
    """When on, every op output is checked for NaN/Inf."""
    _state["debug"] = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named leaf tensor owned by a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _state["debug"] and not np.all(np.isfinite(data)):
        raise NumericDegeneracyError("non-finite value produced by an op")
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- pointwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * a.dtype.type(c), (a,), bw)


def tanh_act(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), bw)


def sigmoid_act(a) -> Tensor:
    a = _as_tensor(a)
    # split by sign so large |x| never overflows exp
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def bw(g):
        _accum(a, g * y * (1.0 - y))

    return _make(y, (a,), bw)


def relu_act(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), bw)


def mix(a, b, alpha) -> Tensor:
    """``alpha * a + (1 - alpha) * b`` for a scalar tensor ``alpha``."""
    a, b, alpha = _as_tensor(a), _as_tensor(b), _as_tensor(alpha)
    _check_same_shape(a, b, "mix")
    if alpha.data.size != 1:
        raise InvalidInputError("mix: alpha must be a scalar")
    al = alpha.data.reshape(())

    def bw(g):
        _accum(a, g * al)
        _accum(b, g * (1 - al))
        if alpha.requires_grad:
            _accum(alpha, np.sum(g * (a.data - b.data)).reshape(alpha.shape))

    return _make(al * a.data + (1 - al) * b.data, (a, b, alpha), bw)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accum(a, np.broadcast_to(g, a.shape).astype(a.dtype))

    return _make(np.sum(a.data), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


# -- convolution and normalization ---------------------------------------------


def conv1d_causal(x, kernel, bias, dilation: int = 1) -> Tensor:
    """Dilated causal 1-D convolution with left zero padding.

    ``out[..., c, t] = bias[c] + sum_{i,k} x[..., i, t - dilation*k] * kernel[c, i, k]``
    where out-of-range time indices read zero. Output length equals input length.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if kernel.data.ndim != 3:
        raise InvalidInputError(f"kernel must be (C_out, C_in, F), got {kernel.shape}")
    c_out, c_in, taps = kernel.shape
    if x.data.ndim not in (2, 3) or x.shape[-2] != c_in:
        raise InvalidInputError(f"input {x.shape} does not match kernel C_in={c_in}")
    if bias.shape != (c_out,):
        raise InvalidInputError(f"bias must be ({c_out},), got {bias.shape}")
    if taps < 1 or dilation < 1:
        raise InvalidInputError("kernel size and dilation must be >= 1")

    m = x.shape[-1]
    xd, w = x.data, kernel.data
    # taps reaching entirely into the padding contribute nothing
    live = [k for k in range(taps) if dilation * k < m]
    # contiguous per-tap slices keep matmul on the BLAS path
    wk = [np.ascontiguousarray(w[:, :, k]) for k in live]
    out = np.zeros(x.shape[:-2] + (c_out, m), dtype=np.result_type(xd, w))
    for k, wt in zip(live, wk):
        s = dilation * k
        out[..., s:] += np.matmul(wt, xd[..., : m - s])
    out += bias.data[:, None]

    def bw(g):
        if kernel.requires_grad:
            gw = np.zeros_like(w)
            batch_axes = [0, 2] if g.ndim == 3 else [1]
            for k in live:
                s = dilation * k
                gw[:, :, k] = np.tensordot(g[..., s:], xd[..., : m - s], axes=(batch_axes, batch_axes))
            _accum(kernel, gw)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for k, wt in zip(live, wk):
                s = dilation * k
                gx[..., : m - s] += np.matmul(np.ascontiguousarray(wt.T), g[..., s:])
            _accum(x, gx)

    return _make(out, (x, kernel, bias), bw)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the channel axis (second to last) independently per time step."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    c = x.shape[-2]
    if gain.shape != (c,) or bias.shape != (c,):
        raise InvalidInputError("layer_norm: gain/bias must have one entry per channel")
    mu = x.data.mean(axis=-2, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data[:, None] * xhat + bias.data[:, None]

    def bw(g):
        red = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
        _accum(gain, (g * xhat).sum(axis=red))
        _accum(bias, g.sum(axis=red))
        if x.requires_grad:
            dxhat = g * gain.data[:, None]
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-2, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-2, keepdims=True)
            )
            _accum(x, gx)

    return _make(out, (x, gain, bias), bw)


def weight_norm_reparam(direction, magnitude) -> Tensor:
    """Effective kernel ``magnitude * direction / ||direction||`` per output channel."""
    direction, magnitude = _as_tensor(direction), _as_tensor(magnitude)
    v = direction.data
    c_out = v.shape[0]
    if magnitude.shape != (c_out,):
        raise InvalidInputError(f"magnitude must be ({c_out},), got {magnitude.shape}")
    axes = tuple(range(1, v.ndim))
    norm = np.sqrt((v * v).sum(axis=axes))
    if np.any(norm == 0):
        raise InvalidStateError("weight norm direction has zero norm")
    bshape = (c_out,) + (1,) * (v.ndim - 1)
    nb = norm.reshape(bshape)
    gb = magnitude.data.reshape(bshape)
    out = gb * v / nb

    def bw(g):
        proj = (g * v).sum(axis=axes)
        _accum(magnitude, proj / norm)
        if direction.requires_grad:
            _accum(direction, gb / nb * (g - (proj / norm**2).reshape(bshape) * v))

    return _make(out, (direction, magnitude), bw)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = _as_tensor(x)
    if not 0 <= p < 1:
        raise InvalidInputError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise InvalidInputError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))

    def bw(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), bw)


def global_avg_pool(x) -> Tensor:
    """Mean over the trailing time axis."""
    x = _as_tensor(x)
    m = x.shape[-1]
    if m < 1:
        raise InvalidInputError("global_avg_pool needs at least one time step")

    def bw(g):
        _accum(x, np.repeat(g[..., None] / m, m, axis=-1))

    return _make(x.data.mean(axis=-1), (x,), bw)


def mse_loss(pred, target) -> Tensor:
    """Squared error summed over components, averaged over the leading batch axis.

    A 1-D prediction counts as a batch of one.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target, like=pred)
    _check_same_shape(pred, target, "mse_loss")
    batch = pred.shape[0] if pred.data.ndim >= 2 else 1
    diff = pred.data - target.data

    def bw(g):
        _accum(pred, g * 2.0 * diff / batch)
        _accum(target, -g * 2.0 * diff / batch)

    return _make(np.asarray(np.sum(diff * diff) / batch), (pred, target), bw)


# -- reverse pass ---------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The recorded graph is released afterwards; calling again on the same
    loss raises :class:`InvalidStateError`.
    """
    if loss._consumed:
        raise InvalidStateError("backward already ran on this graph; run a new forward pass")
    if loss.data.size != 1:
        raise InvalidInputError("backward needs a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    # interior nodes hold their gradient only while the pass runs
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        g = node.grad if node.grad is not None else np.zeros_like(node.data)
        node._backward(g)
        node.grad = None
    for node in order:
        node._parents = ()
        node._backward = None
    loss._consumed = True


# -- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update from each parameter's ``grad``; no weight decay."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        if not p.trainable or p.grad is None:
            continue
        g = p.grad.astype(np.float64)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros(p.shape)
            state.v[p.name] = np.zeros(p.shape)
        v = state.v[p.name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


# -- finite-difference harness --------------------------------------------------


def numerical_grad(f: Callable[[], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place, restored)."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = f()
        flat[j] = orig - step
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error, guarded for near-zero gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / denom)
