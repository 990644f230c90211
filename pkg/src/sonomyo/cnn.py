"""
Micro CNN regressor for MCP flexion, with hand-written backpropagation.

The default stack follows the VGG pattern of 3x3 same-padded convolutions
and 2x2 max pooling, shrunk to two blocks::

    conv3(1->8) relu pool2 | conv3(8->16) relu pool2 | flatten
    dense(->64) relu | dense(->4) | scale(10)

The final fixed ``scale`` layer lets the dense head work in units of
tens of degrees, so outputs are degrees while weights stay O(1).
Everything runs in float64 on ``(batch, channels, height, width)`` arrays.

Architecture descriptor
-----------------------
A model is fully described by a string such as::

    in=1x32x32;conv3:1>8;relu;pool2;conv3:8>16;relu;pool2;flatten;dense:1024>64;relu;dense:64>4;scale:10

Model file layout (little-endian)::

    8s   magic b"SONOCNN\\0"
    u32  format version (1)
    u32  descriptor byte length L, then L bytes utf-8 descriptor
    u32  number of parameter blobs P
    P x (u64 element count n, n f64 values)   in layer order, weight before bias
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, DataError, ModelFormatError, ShapeError
from .kinematics import McpAngles

MAGIC = b"SONOCNN\0"
VERSION = 1
OUTPUT_SCALE = 10.0


class Conv2D:
    """Stride-1 convolution with zero padding that preserves height and width."""

    def __init__(self, in_channels, out_channels, kernel=3):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        self.params = {
            "weight": np.zeros((out_channels, in_channels, kernel, kernel)),
            "bias": np.zeros(out_channels),
        }

    @property
    def descriptor(self):
        return f"conv{self.kernel}:{self.in_channels}>{self.out_channels}"

    @property
    def fan_in(self):
        return self.in_channels * self.kernel ** 2

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ShapeError(f"{self.descriptor} got {c} input channels")
        return (self.out_channels, h, w)

    def forward(self, x):
        n, c, h, w = x.shape
        k, p = self.kernel, self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n c h w k k
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.params["bias"]
        out = out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)
        return out, (cols, x.shape)

    def backward(self, grad, cache, need_input=True):
        cols, (n, c, h, w) = cache
        k, p = self.kernel, self.kernel // 2
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        grads = {"weight": (g.T @ cols).reshape(self.params["weight"].shape),
                 "bias": g.sum(axis=0)}
        if not need_input:
            return None, grads
        dcols = (g @ wmat).reshape(n, h, w, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w], grads


class ReLU:
    params: dict = {}
    descriptor = "relu"

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad, mask):
        return grad * mask, {}


class MaxPool2D:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    params: dict = {}
    descriptor = "pool2"

    def output_shape(self, shape):
        c, h, w = shape
        if h < 2 or w < 2:
            raise ShapeError(f"cannot pool a {h}x{w} map")
        return (c, h // 2, w // 2)

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        blocks = (x[:, :, :2 * h2, :2 * w2]
                  .reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h2, w2, 4))
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, grad, cache):
        arg, (n, c, h, w) = cache
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
        dx = np.zeros((n, c, h, w))
        dx[:, :, :2 * h2, :2 * w2] = (blocks.reshape(n, c, h2, w2, 2, 2)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(n, c, 2 * h2, 2 * w2))
        return dx, {}


class Flatten:
    params: dict = {}
    descriptor = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, shape):
        return grad.reshape(shape), {}


class Dense:
    def __init__(self, in_features, out_features):
        self.in_features, self.out_features = in_features, out_features
        self.params = {"weight": np.zeros((out_features, in_features)),
                       "bias": np.zeros(out_features)}

    @property
    def descriptor(self):
        return f"dense:{self.in_features}>{self.out_features}"

    @property
    def fan_in(self):
        return self.in_features

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"{self.descriptor} got input of shape {shape}")
        return (self.out_features,)

    def forward(self, x):
        return x @ self.params["weight"].T + self.params["bias"], x

    def backward(self, grad, x):
        grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"], grads


class Scale:
    """Multiply by a fixed constant; has no trainable parameters."""

    params: dict = {}

    def __init__(self, factor):
        self.factor = float(factor)

    @property
    def descriptor(self):
        return f"scale:{self.factor:g}"

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        return x * self.factor, None

    def backward(self, grad, _):
        return grad * self.factor, {}


def _parse_layer(token):
    name, _, arg = token.partition(":")
    if name.startswith("conv"):
        cin, cout = (int(v) for v in arg.split(">"))
        return Conv2D(cin, cout, int(name[4:]))
    if name == "dense":
        fin, fout = (int(v) for v in arg.split(">"))
        return Dense(fin, fout)
    if name == "relu":
        return ReLU()
    if name == "pool2":
        return MaxPool2D()
    if name == "flatten":
        return Flatten()
    if name == "scale":
        return Scale(float(arg))
    raise ValueError(f"unknown layer token {token!r}")


class CnnModel:
    """An ordered layer stack with a fixed input shape and 4 outputs."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.version = 0  # bumped on every parameter update
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (4,):
            raise ShapeError(f"network must end in 4 outputs, got {shape}")

    @classmethod
    def from_descriptor(cls, descriptor):
        head, *tokens = descriptor.split(";")
        if not head.startswith("in="):
            raise ValueError("descriptor must start with in=CxHxW")
        shape = tuple(int(v) for v in head[3:].split("x"))
        return cls([_parse_layer(t) for t in tokens], shape)

    @property
    def descriptor(self):
        head = "in=" + "x".join(str(v) for v in self.input_shape)
        return ";".join([head] + [layer.descriptor for layer in self.layers])

    def parameters(self):
        """``(layer index, name, array)`` in the canonical blob order."""
        return [(i, name, layer.params[name])
                for i, layer in enumerate(self.layers)
                for name in ("weight", "bias") if name in layer.params]

    def init(self, seed):
        """He-style uniform initialisation, ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))``."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if "weight" in layer.params:
                bound = math.sqrt(6.0 / layer.fan_in)
                w = layer.params["weight"]
                w[...] = rng.uniform(-bound, bound, w.shape)
                layer.params["bias"][...] = 0.0
        self.version += 1
        return self

    def copy(self):
        other = CnnModel.from_descriptor(self.descriptor)
        for (_, _, dst), (_, _, src) in zip(other.parameters(), self.parameters()):
            dst[...] = src
        return other

    def to_bytes(self):
        desc = self.descriptor.encode("utf-8")
        params = self.parameters()
        parts = [MAGIC, struct.pack("<II", VERSION, len(desc)), desc,
                 struct.pack("<I", len(params))]
        for _, _, arr in params:
            parts.append(struct.pack("<Q", arr.size))
            parts.append(arr.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw, expected_descriptor=None):
        if raw[:8] != MAGIC:
            raise ModelFormatError("not a CNN model file (bad magic)")
        try:
            version, length = struct.unpack_from("<II", raw, 8)
            if version != VERSION:
                raise ModelFormatError(f"unsupported CNN model version {version}")
            desc = raw[16:16 + length].decode("utf-8")
            if expected_descriptor is not None and desc != expected_descriptor:
                raise ModelFormatError(
                    f"architecture mismatch: file has {desc!r}, "
                    f"expected {expected_descriptor!r}")
            model = cls.from_descriptor(desc)
            pos = 16 + length
            (count,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            params = model.parameters()
            if count != len(params):
                raise ModelFormatError(
                    f"descriptor needs {len(params)} blobs, file has {count}")
            for _, name, arr in params:
                (size,) = struct.unpack_from("<Q", raw, pos)
                if size != arr.size:
                    raise ModelFormatError(f"blob size {size} does not fit {name} {arr.shape}")
                arr[...] = np.frombuffer(raw, "<f8", size, pos + 8).reshape(arr.shape)
                pos += 8 + 8 * size
        except (struct.error, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"malformed CNN model file: {exc}") from None
        if pos != len(raw):
            raise ModelFormatError("trailing bytes in CNN model file")
        return model

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, expected_descriptor=None):
        return cls.from_bytes(Path(path).read_bytes(), expected_descriptor)


def micro_vgg(input_shape=(1, 53, 32), width=8, hidden=64, seed=0) -> CnnModel:
    """The default two-block network for a given input shape."""
    c, h, w = input_shape
    flat = 2 * width * (h // 4) * (w // 4)
    layers = [Conv2D(c, width), ReLU(), MaxPool2D(),
              Conv2D(width, 2 * width), ReLU(), MaxPool2D(), Flatten(),
              Dense(flat, hidden), ReLU(), Dense(hidden, 4), Scale(OUTPUT_SCALE)]
    return CnnModel(layers, input_shape).init(seed)


@dataclass
class ForwardCache:
    version: int
    input_shape: tuple
    output_shape: tuple
    layers: list
    single: bool


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    shape = model.input_shape
    single = False
    if x.shape == shape:
        single, x = True, x[None]
    elif shape[0] == 1 and x.shape == shape[1:]:
        single, x = True, x[None, None]
    elif shape[0] == 1 and x.ndim == len(shape) and x.shape[1:] == shape[1:]:
        x = x[:, None]  # (n, h, w) frames
    if x.shape[1:] != shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {shape}")
    return x, single


def forward(model: CnnModel, x):
    """Evaluate the network.

    ``x`` is one input of ``model.input_shape`` or a batch of them. Returns
    the prediction (``(4,)`` or ``(n, 4)``) and the cache for
    :func:`backward`.
    """
    out, single = _as_batch(model, x)
    caches = []
    for layer in model.layers:
        out, cache = layer.forward(out)
        caches.append(cache)
    cache = ForwardCache(model.version, model.input_shape, out.shape, caches,
                         single)
    return (out[0] if single else out), cache


def backward(model: CnnModel, cache: ForwardCache, grad_out):
    """Parameter gradients for upstream gradient ``grad_out`` on the outputs.

    Returns a list aligned with ``model.parameters()``.
    """
    if not isinstance(cache, ForwardCache) or len(cache.layers) != len(model.layers):
        raise CacheError("cache does not belong to this model")
    if cache.version != model.version:
        raise CacheError("parameters changed since the forward pass")
    grad = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        grad = grad[None]
    if grad.shape != cache.output_shape:
        raise CacheError(f"grad_out shape {grad.shape} does not match output "
                         f"{cache.output_shape}")
    per_layer = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, 0, -1):
        grad, per_layer[i] = model.layers[i].backward(grad, cache.layers[i])
    first = model.layers[0]
    if isinstance(first, Conv2D):
        _, per_layer[0] = first.backward(grad, cache.layers[0], need_input=False)
    else:
        _, per_layer[0] = first.backward(grad, cache.layers[0])
    return [per_layer[i][name] for i, name, _ in model.parameters()]


def mae_loss(pred, target):
    """Mean absolute error and its subgradient (``sign(0) = 0``)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("prediction and target shapes differ")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


@dataclass
class AdamState:
    lr: float = 1e-3
    decay: float = 1e-3 / 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def lr_at(self, epoch):
        """Per-epoch schedule ``lr / (1 + decay * epoch)``."""
        return self.lr / (1.0 + self.decay * epoch)


def adam_step(state: AdamState, params, grads, epoch=0):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    state.t += 1
    lr = state.lr_at(epoch)
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    validation_split: float = 0.1
    test_split: float = 0.3
    batch_size: int = 16
    lr: float = 1e-3
    decay: float = 1e-3 / 200
    seed: int = 0

    def __post_init__(self):
        for name in ("validation_split", "test_split"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.test_split + (1 - self.test_split) * self.validation_split >= 1:
            raise ValueError("splits leave no training data")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


MIN_SAMPLES = 10


def split_indices(n, cfg: TrainConfig):
    """Time-ordered ``(train, validation, test)`` index ranges.

    The last ``test_split`` of the sequence is held out for testing, and the
    last ``validation_split`` of what remains for validation.
    """
    n_test = int(round(n * cfg.test_split))
    n_fit = n - n_test
    n_val = int(round(n_fit * cfg.validation_split))
    n_train = n_fit - n_val
    return (np.arange(n_train), np.arange(n_train, n_fit), np.arange(n_fit, n))


def predict_batch(model, x, batch_size=256):
    x, _ = _as_batch(model, x)
    out = np.empty((x.shape[0], 4))
    for lo in range(0, x.shape[0], batch_size):
        out[lo:lo + batch_size], _ = forward(model, x[lo:lo + batch_size])
    return out


def train_cnn(frames, angles, cfg: TrainConfig = TrainConfig(), model=None):
    """Fit a CNN to one session's frames and flexion labels.

    Parameters
    ----------
    frames : ndarray, shape (n, h, w) or (n, 1, h, w)
        Preprocessed frames in time order.
    angles : ndarray, shape (n, 4)
        Flexion labels in degrees.
    cfg : TrainConfig
    model : CnnModel, optional
        Untrained network; defaults to :func:`micro_vgg` for the frame size,
        seeded with ``cfg.seed``.

    Returns
    -------
    model : CnnModel
        Parameters after the final epoch.
    history : dict
        ``train_mae`` and ``val_mae`` per epoch, ``lr`` per epoch, and the
        split sizes.
    """
    frames = np.asarray(frames, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    if frames.ndim == 3:
        frames = frames[:, None]
    n = frames.shape[0]
    if n < MIN_SAMPLES:
        raise DataError(f"need at least {MIN_SAMPLES} samples, got {n}")
    if angles.shape != (n, 4):
        raise ShapeError(f"angles must be ({n}, 4), got {angles.shape}")
    if model is None:
        model = micro_vgg(frames.shape[1:], seed=cfg.seed)
    train, val, test = split_indices(n, cfg)
    if train.size == 0:
        raise DataError("no training samples after splitting")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr, decay=cfg.decay)
    params = [p for _, _, p in model.parameters()]
    history = {"train_mae": [], "val_mae": [], "lr": [],
               "n_train": int(train.size), "n_val": int(val.size),
               "n_test": int(test.size)}
    for epoch in range(cfg.epochs):
        order = rng.permutation(train)
        total = 0.0
        for lo in range(0, order.size, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            pred, cache = forward(model, frames[idx])
            loss, grad = mae_loss(pred, angles[idx])
            adam_step(state, params, backward(model, cache, grad), epoch)
            model.version += 1
            total += loss * idx.size
        history["train_mae"].append(total / train.size)
        history["lr"].append(state.lr_at(epoch))
        if val.size:
            err = predict_batch(model, frames[val]) - angles[val]
            history["val_mae"].append(float(np.mean(np.abs(err))))
        else:
            history["val_mae"].append(float("nan"))
    return model, history


def predict_angles(model: CnnModel, frame) -> McpAngles:
    """Flexion for one preprocessed frame, clamped to [0, 100] degrees."""
    pred, _ = forward(model, frame)
    return McpAngles(np.clip(pred, 0.0, 100.0), pred > 100.0)
