"""Minimal dense CNN engine: layer forward/backward, losses, SGD momentum.

All tensors are numpy float64 arrays in (batch, channels, height, width)
order. Convolutions use same-padding, so spatial reduction comes only
from stride and pooling and output dims are closed-form ceil divisions.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class EngineError(Exception):
    pass


class ShapeError(EngineError):
    """Structural mismatch between a tensor and a layer."""


class TrainingDiverged(EngineError):
    """Non-finite values appeared during training."""


def ceil_div(n: int, d: int) -> int:
    return -(-n // d)


def init_conv_weights(filters, in_channels, kh, kw, rng):
    """Zero-mean Gaussian scaled by 1/sqrt(fan-in)."""
    fan_in = in_channels * kh * kw
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(filters, in_channels, kh, kw))


def init_dense_weights(in_features, units, rng):
    return rng.normal(0.0, 1.0 / math.sqrt(in_features), size=(in_features, units))


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if activation == "linear":
        return z
    raise EngineError(f"unknown activation {activation!r}")


def _activate_grad(z, activation):
    if activation == "relu":
        return (z > 0.0).astype(z.dtype)
    if activation == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    if activation == "linear":
        return np.ones_like(z)
    raise EngineError(f"unknown activation {activation!r}")


class Layer:
    """Base layer; parameterized layers override param accessors."""

    kind = "?"

    def forward(self, x):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def params(self):
        return ()

    def grads(self):
        return ()

    def velocities(self):
        return ()


class ConvLayer(Layer):
    """Same-padded convolution with fused activation (default ReLU)."""

    kind = "conv"

    def __init__(self, in_channels, filters, kh, kw, stride=1, activation="relu"):
        if stride < 1 or kh < 1 or kw < 1 or filters < 1:
            raise ShapeError("conv hyperparameters out of range")
        self.in_channels = in_channels
        self.filters = filters
        self.kh = kh
        self.kw = kw
        self.stride = stride
        self.activation = activation
        self.w = None
        self.b = None
        self.vw = None
        self.vb = None
        self.gw = None
        self.gb = None
        self._cache = None

    def init_weights(self, rng):
        self.w = init_conv_weights(self.filters, self.in_channels, self.kh, self.kw, rng)
        self.b = np.zeros(self.filters)
        self.reset_momentum()

    def reset_momentum(self):
        self.vw = np.zeros_like(self.w)
        self.vb = np.zeros_like(self.b)

    def out_shape(self, h, w):
        return ceil_div(h, self.stride), ceil_div(w, self.stride)

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(
                f"conv expects {self.in_channels} input channels, got {c}"
            )
        s = self.stride
        oh, ow = self.out_shape(h, w)
        ph = max((oh - 1) * s + self.kh - h, 0)
        pw = max((ow - 1) * s + self.kw - w, 0)
        pt, pl = ph // 2, pw // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pt, ph - pt), (pl, pw - pl)))
        win = sliding_window_view(xp, (self.kh, self.kw), axis=(2, 3))[:, :, ::s, ::s]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * self.kh * self.kw)
        z = cols @ self.w.reshape(self.filters, -1).T + self.b
        z = z.reshape(b, oh, ow, self.filters).transpose(0, 3, 1, 2)
        self._cache = (x.shape, cols, z, (ph, pw, pt, pl, oh, ow))
        return _activate(z, self.activation)

    def backward(self, gy):
        xshape, cols, z, (ph, pw, pt, pl, oh, ow) = self._cache
        b, c, h, w = xshape
        if gy.shape != z.shape:
            raise ShapeError(f"conv backward got grad shape {gy.shape}, expected {z.shape}")
        gz = gy * _activate_grad(z, self.activation)
        gzc = gz.transpose(0, 2, 3, 1).reshape(b * oh * ow, self.filters)
        self.gb = gzc.sum(axis=0)
        self.gw = (gzc.T @ cols).reshape(self.w.shape)
        gcols = gzc @ self.w.reshape(self.filters, -1)
        g = gcols.reshape(b, oh, ow, c, self.kh, self.kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((b, c, h + ph, w + pw))
        s = self.stride
        for i in range(self.kh):
            for j in range(self.kw):
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += g[:, :, :, :, i, j]
        return gxp[:, :, pt:pt + h, pl:pl + w]

    def params(self):
        return (self.w, self.b)

    def grads(self):
        return (self.gw, self.gb)

    def velocities(self):
        return (self.vw, self.vb)


class MaxPoolLayer(Layer):
    """Non-overlapping max pooling; edge windows are truncated.

    Gradient goes to the argmax of each window, first occurrence on ties.
    """

    kind = "pool"

    def __init__(self, ph, pw):
        if ph < 2 or pw < 2:
            raise ShapeError("pool dims must be >= 2")
        self.ph = ph
        self.pw = pw
        self._cache = None

    def out_shape(self, h, w):
        return ceil_div(h, self.ph), ceil_div(w, self.pw)

    def forward(self, x):
        b, c, h, w = x.shape
        oh, ow = self.out_shape(h, w)
        xp = np.pad(
            x,
            ((0, 0), (0, 0), (0, oh * self.ph - h), (0, ow * self.pw - w)),
            constant_values=-np.inf,
        )
        blocks = (
            xp.reshape(b, c, oh, self.ph, ow, self.pw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, oh, ow, self.ph * self.pw)
        )
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return y

    def backward(self, gy):
        (b, c, h, w), idx = self._cache
        oh, ow = self.out_shape(h, w)
        gblocks = np.zeros((b, c, oh, ow, self.ph * self.pw))
        np.put_along_axis(gblocks, idx[..., None], gy[..., None], axis=-1)
        gx = (
            gblocks.reshape(b, c, oh, ow, self.ph, self.pw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, oh * self.ph, ow * self.pw)
        )
        return gx[:, :, :h, :w]


class UpsampleLayer(Layer):
    """Nearest-neighbor replication by an integer factor."""

    kind = "upsample"

    def __init__(self, factor):
        if factor < 2:
            raise ShapeError("upsample factor must be >= 2")
        self.factor = factor
        self._in_shape = None

    def forward(self, x):
        self._in_shape = x.shape
        return x.repeat(self.factor, axis=2).repeat(self.factor, axis=3)

    def backward(self, gy):
        b, c, h, w = self._in_shape
        f = self.factor
        return gy.reshape(b, c, h, f, w, f).sum(axis=(3, 5))


class CropLayer(Layer):
    """Top-left crop to a fixed spatial target."""

    kind = "crop"

    def __init__(self, target_h, target_w):
        self.target_h = target_h
        self.target_w = target_w
        self._in_shape = None

    def forward(self, x):
        b, c, h, w = x.shape
        if h < self.target_h or w < self.target_w:
            raise ShapeError(f"crop target ({self.target_h},{self.target_w}) exceeds input ({h},{w})")
        self._in_shape = x.shape
        return x[:, :, : self.target_h, : self.target_w]

    def backward(self, gy):
        gx = np.zeros(self._in_shape)
        gx[:, :, : self.target_h, : self.target_w] = gy
        return gx


class FlattenLayer(Layer):
    kind = "flatten"

    def __init__(self):
        self._in_shape = None

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._in_shape)


class DenseLayer(Layer):
    """Fully connected layer over flattened features; linear output."""

    kind = "dense"

    def __init__(self, in_features, units):
        self.in_features = in_features
        self.units = units
        self.w = None
        self.b = None
        self.vw = None
        self.vb = None
        self.gw = None
        self.gb = None
        self._cache = None

    def init_weights(self, rng):
        self.w = init_dense_weights(self.in_features, self.units, rng)
        self.b = np.zeros(self.units)
        self.reset_momentum()

    def reset_momentum(self):
        self.vw = np.zeros_like(self.w)
        self.vb = np.zeros_like(self.b)

    def forward(self, x):
        if x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got {x.shape[1]}")
        self._cache = x
        return x @ self.w + self.b

    def backward(self, gy):
        x = self._cache
        self.gw = x.T @ gy
        self.gb = gy.sum(axis=0)
        return gy @ self.w.T

    def params(self):
        return (self.w, self.b)

    def grads(self):
        return (self.gw, self.gb)

    def velocities(self):
        return (self.vw, self.vb)


def softmax_probs(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient wrt logits."""
    if not np.all(np.isfinite(logits)):
        raise TrainingDiverged("non-finite logits in softmax head")
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float((lse - logits[np.arange(n), labels]).mean())
    grad = softmax_probs(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def dense_softmax_head(x, layer: DenseLayer, labels):
    """Flatten, apply the dense head, and return (loss, grad wrt x)."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != layer.in_features:
        raise ShapeError(f"head expects {layer.in_features} features, got {flat.shape[1]}")
    cache = layer._cache
    logits = layer.forward(flat)
    loss, glogits = softmax_cross_entropy(logits, labels)
    gx = layer.backward(glogits).reshape(x.shape)
    layer._cache = cache
    return loss, gx


def mse_loss(pred, target):
    """Mean squared error and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, (2.0 / diff.size) * diff


def reconstruction_accuracy(x, x_recon):
    """clamp(1 - MSE, 0, 1) on [0,1]-scaled pixels."""
    if x.shape != x_recon.shape:
        raise ShapeError(f"reconstruction shapes differ: {x.shape} vs {x_recon.shape}")
    mse = float(((x - x_recon) ** 2).mean())
    return min(max(1.0 - mse, 0.0), 1.0)


def sgd_momentum_step(weights, grads, velocity, lr, momentum):
    """v <- momentum*v - lr*g; w <- w + v, in place."""
    velocity *= momentum
    velocity -= lr * grads
    weights += velocity


class Network:
    """An ordered stack of layers trained with SGD + momentum."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from exc
        return x

    def backward(self, gy):
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy

    def step(self, lr, momentum):
        for layer in self.layers:
            for w, g, v in zip(layer.params(), layer.grads(), layer.velocities()):
                sgd_momentum_step(w, g, v, lr, momentum)

    def param_layers(self):
        return [l for l in self.layers if l.params()]


# ---------------------------------------------------------------------------
# Weight blob serialization ("EVOW" format)
# ---------------------------------------------------------------------------

_MAGIC = b"EVOW"
_VERSION = 1
_KIND_TAGS = {"conv": 1, "pool": 2, "upsample": 3, "crop": 4, "flatten": 5, "dense": 6}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}
_ACT_CODES = {"relu": 0, "sigmoid": 1, "linear": 2}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}


def _layer_hyperparams(layer):
    if layer.kind == "conv":
        return (
            layer.in_channels,
            layer.filters,
            layer.kh,
            layer.kw,
            layer.stride,
            _ACT_CODES[layer.activation],
        )
    if layer.kind == "pool":
        return (layer.ph, layer.pw)
    if layer.kind == "upsample":
        return (layer.factor,)
    if layer.kind == "crop":
        return (layer.target_h, layer.target_w)
    if layer.kind == "flatten":
        return ()
    if layer.kind == "dense":
        return (layer.in_features, layer.units)
    raise EngineError(f"unserializable layer kind {layer.kind}")


def serialize_network(net: Network) -> bytes:
    out = [_MAGIC, struct.pack("<II", _VERSION, len(net.layers))]
    for layer in net.layers:
        hp = _layer_hyperparams(layer)
        out.append(struct.pack("<BB", _KIND_TAGS[layer.kind], len(hp)))
        out.append(struct.pack(f"<{len(hp)}I", *hp))
        w, b = layer.params() if layer.params() else (None, None)
        for arr in (w, b):
            if arr is None:
                out.append(struct.pack("<Q", 0))
            else:
                raw = arr.astype("<f4").tobytes()
                out.append(struct.pack("<Q", arr.size))
                out.append(raw)
    return b"".join(out)


def deserialize_network(blob: bytes) -> Network:
    if blob[:4] != _MAGIC:
        raise EngineError("bad weights blob: wrong magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise EngineError(f"unsupported weights blob version {version}")
    off = 12
    layers = []
    for _ in range(count):
        tag, nhp = struct.unpack_from("<BB", blob, off)
        off += 2
        hp = struct.unpack_from(f"<{nhp}I", blob, off)
        off += 4 * nhp
        arrays = []
        for _ in range(2):
            (n,) = struct.unpack_from("<Q", blob, off)
            off += 8
            if n:
                arrays.append(np.frombuffer(blob, "<f4", n, off).astype(np.float64))
                off += 4 * n
            else:
                arrays.append(None)
        kind = _TAG_KINDS.get(tag)
        if kind == "conv":
            in_c, f, kh, kw, s, act = hp
            layer = ConvLayer(in_c, f, kh, kw, s, _CODE_ACTS[act])
            layer.w = arrays[0].reshape(f, in_c, kh, kw)
            layer.b = arrays[1]
            layer.reset_momentum()
        elif kind == "pool":
            layer = MaxPoolLayer(*hp)
        elif kind == "upsample":
            layer = UpsampleLayer(*hp)
        elif kind == "crop":
            layer = CropLayer(*hp)
        elif kind == "flatten":
            layer = FlattenLayer()
        elif kind == "dense":
            layer = DenseLayer(*hp)
            layer.w = arrays[0].reshape(hp[0], hp[1])
            layer.b = arrays[1]
            layer.reset_momentum()
        else:
            raise EngineError(f"unknown layer tag {tag}")
        layers.append(layer)
    return Network(layers)


# ---------------------------------------------------------------------------
# Per-individual training
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs_run: int
    final_train_loss: float
    metric: float
    wall_seconds: float
    diverged: bool = False


@dataclass
class DatasetView:
    """Train/validation arrays for one training job."""

    train_x: np.ndarray
    train_y: np.ndarray | None
    val_x: np.ndarray
    val_y: np.ndarray | None


def _eval_classifier(net, x, y, chunk=256):
    correct = 0
    for i in range(0, x.shape[0], chunk):
        logits = net.forward(x[i:i + chunk])
        correct += int((logits.argmax(axis=1) == y[i:i + chunk]).sum())
    return correct / x.shape[0]


def _eval_reconstruction(net, x, chunk=256):
    sq_sum = 0.0
    for i in range(0, x.shape[0], chunk):
        xb = x[i:i + chunk]
        recon = net.forward(xb)
        sq_sum += float(((xb - recon) ** 2).sum())
    mse = sq_sum / x.size
    return min(max(1.0 - mse, 0.0), 1.0)


def train_network(net: Network, kind: str, view: DatasetView, epochs, batch_size,
                  lr, momentum, rng) -> TrainReport:
    """Minibatch SGD training loop for one network.

    `kind` is "encoder" (reconstruction objective) or "classifier".
    Divergence aborts training and reports metric 0.0 instead of raising,
    so the evolutionary loop survives bad mutants.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    t0 = time.monotonic()
    n = view.train_x.shape[0]
    loss = 0.0
    epochs_run = 0
    try:
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n - batch_size + 1, batch_size):
                idx = order[start:start + batch_size]
                xb = view.train_x[idx]
                out = net.forward(xb)
                if kind == "classifier":
                    loss, gy = softmax_cross_entropy(out, view.train_y[idx])
                else:
                    loss, gy = mse_loss(out, xb)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss}")
                net.backward(gy)
                net.step(lr, momentum)
            epochs_run += 1
        if kind == "classifier":
            metric = _eval_classifier(net, view.val_x, view.val_y)
        else:
            metric = _eval_reconstruction(net, view.val_x)
        if not math.isfinite(metric):
            raise TrainingDiverged("non-finite validation metric")
        diverged = False
    except TrainingDiverged:
        metric = 0.0
        diverged = True
    return TrainReport(
        epochs_run=epochs_run,
        final_train_loss=loss if math.isfinite(loss) else float("nan"),
        metric=metric,
        wall_seconds=time.monotonic() - t0,
        diverged=diverged,
    )
