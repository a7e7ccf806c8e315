"""A small convolutional network trained to regress the synergy target.

Tensors are numpy arrays laid out ``(N, C, H, W)``; single images may be
passed as ``(C, H, W)``. Convolution and pooling pad by ``(f - 1) // 2``.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DivergedError

log = logging.getLogger(__name__)

HEADS = ("paper", "linear")


# ---------------------------------------------------------------- layer specs

@dataclass(frozen=True)
class Conv:
    filters: int
    size: int
    stride: int = 1
    kind = "conv"

    @property
    def pad(self) -> int:
        return (self.size - 1) // 2

    def __str__(self):
        return f"conv({self.filters},{self.size},{self.stride})"


@dataclass(frozen=True)
class MaxPool:
    window: int
    stride: int
    kind = "maxpool"

    @property
    def pad(self) -> int:
        return (self.window - 1) // 2

    def __str__(self):
        return f"maxpool({self.window},{self.stride})"


@dataclass(frozen=True)
class ReLU:
    kind = "relu"

    def __str__(self):
        return "relu"


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"

    def __str__(self):
        return "flatten"


@dataclass(frozen=True)
class FC:
    out_dim: int
    kind = "fc"

    def __str__(self):
        return f"fc({self.out_dim})"


@dataclass(frozen=True)
class Dropout:
    rate: float
    kind = "dropout"

    def __str__(self):
        return f"dropout({self.rate:g})"


_LAYER_RE = re.compile(r"^\s*([a-z]+)\s*(?:\(([^)]*)\))?\s*$")


def parse_layer(text: str):
    m = _LAYER_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse layer {text!r}")
    name, args = m.group(1), m.group(2)
    vals = [a.strip() for a in args.split(",")] if args else []
    try:
        if name == "conv" and len(vals) in (2, 3):
            return Conv(*(int(v) for v in vals))
        if name == "maxpool" and len(vals) == 2:
            return MaxPool(int(vals[0]), int(vals[1]))
        if name == "relu" and not vals:
            return ReLU()
        if name == "flatten" and not vals:
            return Flatten()
        if name == "fc" and len(vals) == 1:
            return FC(int(vals[0]))
        if name == "dropout" and len(vals) == 1:
            return Dropout(float(vals[0]))
    except ValueError as exc:
        raise ConfigError(f"bad arguments in layer {text!r}: {exc}") from exc
    raise ConfigError(f"unknown layer {text!r}")


def parse_layers(text: str) -> tuple:
    """Parse ``"conv(8,7,2) relu maxpool(3,2) ..."`` (space or comma separated)."""
    tokens = re.findall(r"[a-z]+(?:\([^)]*\))?", text)
    return tuple(parse_layer(t) for t in tokens)


@dataclass(frozen=True)
class NetSpec:
    input_shape: tuple  # (channels, H, W)
    layers: tuple

    def __post_init__(self):
        self.shapes()  # validates

    def shapes(self) -> list:
        """Output shape of every layer; raises ConfigError on inconsistency."""
        shape = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer})"
            if layer.kind in ("conv", "maxpool"):
                if len(shape) != 3:
                    raise ConfigError(f"{where} needs a (C, H, W) input, got {shape}")
                f = layer.size if layer.kind == "conv" else layer.window
                if f < 1 or layer.stride < 1:
                    raise ConfigError(f"{where}: window and stride must be >= 1")
                if layer.kind == "conv" and f % 2 == 0:
                    raise ConfigError(f"{where}: conv filter size must be odd")
                c, h, w = shape
                ho = (h + 2 * layer.pad - f) // layer.stride + 1
                wo = (w + 2 * layer.pad - f) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise ConfigError(f"{where}: input {h}x{w} too small")
                shape = (layer.filters if layer.kind == "conv" else c, ho, wo)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "fc":
                if len(shape) != 1:
                    raise ConfigError(f"{where}: fc needs a flat input; add flatten")
                if layer.out_dim < 1:
                    raise ConfigError(f"{where}: output dim must be >= 1")
                shape = (layer.out_dim,)
            elif layer.kind == "dropout":
                if not 0.0 <= layer.rate < 1.0:
                    raise ConfigError(f"{where}: rate must lie in [0, 1)")
            out.append(shape)
        if not out or self.layers[-1].kind != "fc":
            raise ConfigError("network must end in an fc layer")
        return out

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def conv_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if l.kind == "conv"]

    def describe(self) -> str:
        return " ".join(str(l) for l in self.layers)


def toy_alex(k: int, input_size: int = 227, channels: int = 1) -> NetSpec:
    layers = parse_layers(
        "conv(8,7,2) relu maxpool(3,2) conv(16,5,1) relu maxpool(3,2) "
        f"conv(32,3,1) relu flatten fc(128) relu dropout(0.5) fc({k})"
    )
    return NetSpec((channels, input_size, input_size), layers)


# ---------------------------------------------------------------- parameters

@dataclass
class NetParams:
    weights: list
    biases: list
    rng_seed: int = 0

    def copy(self) -> "NetParams":
        cp = lambda a: None if a is None else a.copy()
        return NetParams([cp(w) for w in self.weights], [cp(b) for b in self.biases], self.rng_seed)

    def astype(self, dtype) -> "NetParams":
        cast = lambda a: None if a is None else np.array(a, dtype=dtype)
        return NetParams([cast(w) for w in self.weights], [cast(b) for b in self.biases],
                         self.rng_seed)

    def arrays(self):
        """(layer index, name, array) for every learnable tensor."""
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is not None:
                yield i, "W", w
                yield i, "b", b


def init_params(spec: NetSpec, seed: int = 0) -> NetParams:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = [tuple(spec.input_shape)] + spec.shapes()
    weights, biases = [], []
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i]
        if layer.kind == "conv":
            fan_in = in_shape[0] * layer.size * layer.size
            wshape = (layer.filters, in_shape[0], layer.size, layer.size)
            nb = layer.filters
        elif layer.kind == "fc":
            fan_in = in_shape[0]
            wshape = (fan_in, layer.out_dim)
            nb = layer.out_dim
        else:
            weights.append(None)
            biases.append(None)
            continue
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=wshape))
        biases.append(np.zeros(nb))
    return NetParams(weights, biases, rng_seed=seed)


# ---------------------------------------------------------------- layer kernels

def _windows(xp, f, stride):
    return sliding_window_view(xp, (f, f), axis=(2, 3))[:, :, ::stride, ::stride]


def _im2col(xp, f, stride, ho, wo):
    """Columns laid out ``(C, f, f, N, ho, wo)``."""
    n, c = xp.shape[:2]
    cols = np.empty((c, f, f, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(f):
        for j in range(f):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * f * f, n * ho * wo)


def conv_forward(x, W, b, stride, pad):
    n, _, h, w = x.shape
    F, C, f, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - f) // stride + 1
    wo = (w + 2 * pad - f) // stride + 1
    cols = _im2col(xp, f, stride, ho, wo)
    out = W.reshape(F, -1) @ cols + b[:, None]
    out = out.reshape(F, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), (x.shape, cols, ho, wo)


def conv_backward(dout, cache, W, stride, pad, need_dx=True):
    x_shape, cols, ho, wo = cache
    n, C, h, w = x_shape
    F, _, f, _ = W.shape
    dmat = dout.transpose(1, 0, 2, 3).reshape(F, -1)
    dW = (dmat @ cols.T).reshape(W.shape)
    db = dmat.sum(axis=1)
    if not need_dx:
        return None, dW, db
    dcols = (W.reshape(F, -1).T @ dmat).reshape(C, f, f, n, ho, wo)
    dxp = np.zeros((C, n, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(f):
        for j in range(f):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return dx.transpose(1, 0, 2, 3), dW, db


def maxpool_forward(x, window, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
    win = _windows(xp, window, stride)
    n, c, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, ho, wo)


def maxpool_backward(dout, cache, window, stride, pad):
    x_shape, arg, ho, wo = cache
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(window):
        for j in range(window):
            hit = arg == i * window + j
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dout * hit
    return dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp


def _dropout_rng(seed):
    return np.random.default_rng(seed)


def _run_forward(spec, params, x, train_mode, dropout_seed):
    rng = _dropout_rng(dropout_seed) if train_mode else None
    caches, conv_maps = [], []
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind == "conv":
            x, cache = conv_forward(x, params.weights[i], params.biases[i], layer.stride, layer.pad)
            conv_maps.append(x)
        elif kind == "maxpool":
            x, cache = maxpool_forward(x, layer.window, layer.stride, layer.pad)
        elif kind == "relu":
            cache = x > 0
            x = x * cache
        elif kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif kind == "fc":
            cache = x
            x = x @ params.weights[i] + params.biases[i]
        elif kind == "dropout":
            if train_mode and layer.rate > 0:
                cache = ((rng.random(x.shape) >= layer.rate) / (1.0 - layer.rate)).astype(x.dtype)
                x = x * cache
            else:
                cache = None
        caches.append(cache)
    return x, conv_maps, caches


def _check_input(spec, x):
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float64, copy=False)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != tuple(spec.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match spec {spec.input_shape}")
    return x, single


def forward(spec: NetSpec, params: NetParams, x, train_mode: bool = False, dropout_seed=None):
    """Network output and every conv layer's (pre-activation) map.

    Returns ``(theta, conv_maps)``; a single ``(C, H, W)`` input yields a
    ``k``-vector and ``(N_p, H_p, W_p)`` maps.
    """
    x, single = _check_input(spec, x)
    theta, maps, _ = _run_forward(spec, params, x, train_mode, dropout_seed)
    if single:
        return theta[0], [m[0] for m in maps]
    return theta, maps


# ---------------------------------------------------------------- loss

def squash(theta, head="paper"):
    """The output non-linearity: ReLU then softmax ("paper") or identity."""
    theta = np.asarray(theta, dtype=np.float64)
    if head == "linear":
        return theta
    z = np.maximum(theta, 0.0)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def synergy_loss(theta, S, head="paper"):
    """Squared distance between the squashed output and the target.

    For a batch (2-D input) the per-sample losses are averaged and the
    gradient is scaled accordingly.
    """
    theta = np.asarray(theta, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if theta.shape != S.shape:
        raise ValueError(f"output {theta.shape} and target {S.shape} differ")
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    sigma = squash(theta, head)
    resid = sigma - S
    dsigma = 2.0 * resid
    if head == "linear":
        grad = dsigma
    else:
        # softmax Jacobian-vector product, then the ReLU mask
        dz = sigma * (dsigma - np.sum(dsigma * sigma, axis=-1, keepdims=True))
        grad = dz * (theta > 0)
    per_sample = np.sum(resid * resid, axis=-1)
    if theta.ndim == 1:
        return float(per_sample), grad
    n = theta.shape[0]
    return float(per_sample.mean()), grad / n


# ---------------------------------------------------------------- backward

def backward(spec: NetSpec, params: NetParams, x, S, dropout_seed=None, head="paper",
             train_mode=True):
    """Loss and exact gradients of every parameter.

    Dropout masks are regenerated from ``dropout_seed`` so they match a
    training-mode ``forward`` with the same seed. Returns
    ``(loss, grads)`` with ``grads`` shaped like ``params``.
    """
    x, single = _check_input(spec, x)
    S = np.asarray(S, dtype=np.float64)
    if single:
        S = S[None]
    theta, _, caches = _run_forward(spec, params, x, train_mode, dropout_seed)
    loss, d = synergy_loss(theta, S, head)
    d = d.astype(x.dtype, copy=False)
    gw = [None] * len(spec.layers)
    gb = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, cache = spec.layers[i], caches[i]
        kind = layer.kind
        if kind == "fc":
            gw[i] = cache.T @ d
            gb[i] = d.sum(axis=0)
            if i:
                d = d @ params.weights[i].T
        elif kind == "conv":
            d, gw[i], gb[i] = conv_backward(d, cache, params.weights[i], layer.stride,
                                            layer.pad, need_dx=i > 0)
        elif kind == "maxpool":
            d = maxpool_backward(d, cache, layer.window, layer.stride, layer.pad)
        elif kind == "relu":
            d = d * cache
        elif kind == "flatten":
            d = d.reshape(cache)
        elif kind == "dropout":
            if cache is not None:
                d = d * cache
    return loss, NetParams(gw, gb, params.rng_seed)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainSchedule:
    lr0: float = 1e-5
    halve_every: int = 2000
    batch: int = 16
    total_iters: int = 8000
    momentum: float = 0.0
    seed: int = 0
    val_every: int = 100
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"unsupported training dtype {self.dtype!r}")
        if self.lr0 <= 0 or self.halve_every < 1 or self.batch < 1 or self.total_iters < 0:
            raise ConfigError(f"invalid training schedule {self}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")

    def learning_rate(self, iteration: int) -> float:
        return self.lr0 * 0.5 ** (iteration // self.halve_every)


@dataclass
class LossHistory:
    train: list = field(default_factory=list)  # (iteration, lr, loss)
    val: list = field(default_factory=list)  # (iteration, loss)

    def to_csv(self) -> str:
        val = dict(self.val)
        lines = ["iteration,lr,train_loss,val_loss"]
        for it, lr, loss in self.train:
            v = val.get(it)
            lines.append(f"{it},{lr!r},{loss!r},{'' if v is None else repr(v)}")
        return "\n".join(lines) + "\n"


def evaluate_loss(spec, params, images, targets, head="paper", chunk=64) -> float:
    total = 0.0
    n = len(images)
    for s in range(0, n, chunk):
        theta, _ = forward(spec, params, images[s:s + chunk])
        loss, _ = synergy_loss(theta, targets[s:s + chunk], head)
        total += loss * len(theta)
    return total / n


def sgd_train(spec: NetSpec, params: NetParams, images, targets, sched: TrainSchedule,
              val=None, head="paper", progress=None):
    """Minibatch SGD on the synergy loss with step-halving learning rate.

    ``images`` is ``(n, C, H, W)``, ``targets`` ``(n, k)``. ``val`` is an
    optional ``(images, targets)`` pair scored every ``sched.val_every``
    iterations. Returns ``(params, LossHistory)``.
    """
    dtype = np.dtype(sched.dtype)
    images = np.asarray(images, dtype=dtype)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(images)
    if n == 0:
        raise ValueError("empty training set")
    if targets.shape != (n, spec.output_dim):
        raise ValueError(f"targets must be ({n}, {spec.output_dim}), got {targets.shape}")
    params = params.astype(dtype)
    velocity = [None if w is None else np.zeros_like(w) for w in params.weights]
    vel_b = [None if b is None else np.zeros_like(b) for b in params.biases]
    rng = np.random.default_rng(sched.seed)
    batch = min(sched.batch, n)
    order, cursor = rng.permutation(n), 0
    hist = LossHistory()
    for it in range(sched.total_iters):
        if cursor + batch > n:
            order, cursor = rng.permutation(n), 0
        idx = np.sort(order[cursor:cursor + batch])
        cursor += batch
        lr = sched.learning_rate(it)
        loss, grads = backward(spec, params, images[idx], targets[idx],
                               dropout_seed=(sched.seed, it), head=head)
        if not math.isfinite(loss):
            raise DivergedError(it, loss)
        for i, w in enumerate(params.weights):
            if w is None:
                continue
            if sched.momentum:
                velocity[i] = sched.momentum * velocity[i] - lr * grads.weights[i]
                vel_b[i] = sched.momentum * vel_b[i] - lr * grads.biases[i]
                w += velocity[i]
                params.biases[i] += vel_b[i]
            else:
                w -= lr * grads.weights[i]
                params.biases[i] -= lr * grads.biases[i]
        hist.train.append((it, lr, loss))
        last = it == sched.total_iters - 1
        if val is not None and len(val[0]) and (it % sched.val_every == 0 or last):
            hist.val.append((it, evaluate_loss(spec, params, np.asarray(val[0], dtype=dtype),
                                               val[1], head)))
        if progress is not None:
            progress(it, loss)
    return params.astype(np.float64), hist
