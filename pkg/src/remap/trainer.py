"""Miniature neural-network trainer: numpy forward/backward passes for the
five layer kinds plus the implicit classifier head, minibatch SGD with
momentum, per-epoch metrics, and a finite-difference gradient checker.

Training is bit-reproducible: weight init, epoch shuffling and dropout masks
all derive from the config seed. The float32 default is fast; gradient
checks run in float64.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arch import (Architecture, Activation, Conv2D, Dense, Dropout, MaxPool,
                   count_parameters, infer_shapes, validate)
from .data import Dataset


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    mode: str = "real"  # real | surrogate

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be > 0")
        if self.mode not in ("real", "surrogate"):
            raise TrainerError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "momentum": self.momentum,
                "seed": self.seed, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {"epochs", "batch_size", "learning_rate", "momentum", "seed", "mode"}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainingRecord:
    train_loss: list[float]
    val_accuracy: list[float]
    predictions: np.ndarray  # final predicted labels over the val split
    confusion: np.ndarray    # (k, k) counts, rows = true class
    per_class_accuracy: list[float]
    param_count: int
    wall_time: float
    status: str = "complete"  # complete | cancelled | failed
    epochs_run: int = 0

    @property
    def final_val_accuracy(self) -> float:
        total = int(self.confusion.sum())
        return float(np.trace(self.confusion)) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "val_accuracy": [float(v) for v in self.val_accuracy],
            "predictions": [int(v) for v in self.predictions],
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "per_class_accuracy": [float(v) for v in self.per_class_accuracy],
            "param_count": int(self.param_count),
            "wall_time": float(self.wall_time),
            "status": self.status,
            "epochs_run": int(self.epochs_run),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRecord":
        return cls(
            train_loss=list(d["train_loss"]),
            val_accuracy=list(d["val_accuracy"]),
            predictions=np.asarray(d["predictions"], dtype=np.int64),
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            per_class_accuracy=list(d["per_class_accuracy"]),
            param_count=d["param_count"],
            wall_time=d["wall_time"],
            status=d["status"],
            epochs_run=d["epochs_run"],
        )


# ---------------------------------------------------------------------------
# layers

class _ConvLayer:
    def __init__(self, spec: Conv2D, c_in: int, rng, dtype):
        k = spec.kernel
        bound = math.sqrt(6.0 / (k * k * c_in))
        self.w = rng.uniform(-bound, bound, (k, k, c_in, spec.filters)).astype(dtype)
        self.b = np.zeros(spec.filters, dtype=dtype)
        self.stride = spec.stride
        self.grads = {}

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x, train, drop_rng):
        k = self.w.shape[0]
        s = self.stride
        patches = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        n, oh, ow = patches.shape[:3]
        cols = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3))
        cols = cols.reshape(n * oh * ow, -1)
        self._cols, self._x_shape, self._out_hw = cols, x.shape, (oh, ow)
        wflat = self.w.reshape(-1, self.w.shape[3])
        return (cols @ wflat + self.b).reshape(n, oh, ow, -1)

    def backward(self, dout):
        k = self.w.shape[0]
        s = self.stride
        n, oh, ow = dout.shape[0], *self._out_hw
        dflat = dout.reshape(n * oh * ow, -1)
        wflat = self.w.reshape(-1, self.w.shape[3])
        self.grads = {"w": (self._cols.T @ dflat).reshape(self.w.shape),
                      "b": dflat.sum(axis=0)}
        dpatches = (dflat @ wflat.T).reshape(n, oh, ow, k, k, self.w.shape[2])
        dx = np.zeros(self._x_shape, dtype=dout.dtype)
        for di in range(k):
            for dj in range(k):
                dx[:, di : di + s * oh : s, dj : dj + s * ow : s, :] += \
                    dpatches[:, :, :, di, dj, :]
        return dx


class _MaxPoolLayer:
    def __init__(self, spec: MaxPool):
        self.pool = spec.pool
        self.grads = {}

    def params(self):
        return {}

    def forward(self, x, train, drop_rng):
        p = self.pool
        n, h, w, c = x.shape
        oh, ow = h // p, w // p
        windows = (x[:, : oh * p, : ow * p, :]
                   .reshape(n, oh, p, ow, p, c)
                   .transpose(0, 1, 3, 5, 2, 4)
                   .reshape(n, oh, ow, c, p * p))
        self._argmax = windows.argmax(axis=-1)
        self._x_shape = x.shape
        return np.take_along_axis(windows, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        p = self.pool
        n, oh, ow, c = dout.shape
        dwin = np.zeros((n, oh, ow, c, p * p), dtype=dout.dtype)
        np.put_along_axis(dwin, self._argmax[..., None], dout[..., None], axis=-1)
        dcrop = (dwin.reshape(n, oh, ow, c, p, p)
                 .transpose(0, 1, 4, 2, 5, 3)
                 .reshape(n, oh * p, ow * p, c))
        dx = np.zeros(self._x_shape, dtype=dout.dtype)
        dx[:, : oh * p, : ow * p, :] = dcrop
        return dx


class _DenseLayer:
    def __init__(self, units: int, fan_in: int, rng, dtype):
        bound = math.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-bound, bound, (fan_in, units)).astype(dtype)
        self.b = np.zeros(units, dtype=dtype)
        self.grads = {}

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x, train, drop_rng):
        self._x_shape = x.shape
        flat = x.reshape(x.shape[0], -1)
        self._flat = flat
        return flat @ self.w + self.b

    def backward(self, dout):
        self.grads = {"w": self._flat.T @ dout, "b": dout.sum(axis=0)}
        return (dout @ self.w.T).reshape(self._x_shape)


class _ActivationLayer:
    def __init__(self, spec: Activation):
        self.fn = spec.fn
        self.grads = {}

    def params(self):
        return {}

    def forward(self, x, train, drop_rng):
        if self.fn == "relu":
            self._cache = x > 0
            return np.maximum(x, 0)
        if self.fn == "tanh":
            out = np.tanh(x)
            self._cache = out
            return out
        out = 1.0 / (1.0 + np.exp(-x))
        self._cache = out
        return out

    def backward(self, dout):
        if self.fn == "relu":
            return dout * self._cache
        if self.fn == "tanh":
            return dout * (1.0 - self._cache ** 2)
        return dout * self._cache * (1.0 - self._cache)


class _DropoutLayer:
    """Inverted dropout: activity scaled by 1/(1-rate) at train time so
    evaluation is the identity."""

    def __init__(self, spec: Dropout):
        self.rate = float(spec.rate)
        self.grads = {}

    def params(self):
        return {}

    def forward(self, x, train, drop_rng):
        if not train:
            self._mask = None
            return x
        keep = (drop_rng.random(x.shape) >= self.rate).astype(x.dtype)
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class Network:
    """Learnable state for one architecture (implicit head included)."""

    def __init__(self, arch: Architecture, seed: int, dtype=np.float32):
        violations = validate(arch)
        if violations:
            raise TrainerError("cannot build an invalid architecture: "
                               + "; ".join(v.message for v in violations))
        shapes = [arch.input_shape] + infer_shapes(arch)
        rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
        self.dtype = dtype
        self.layers = []
        for spec, shape_in in zip(arch.layers, shapes):
            if isinstance(spec, Conv2D):
                self.layers.append(_ConvLayer(spec, shape_in[2], rng, dtype))
            elif isinstance(spec, MaxPool):
                self.layers.append(_MaxPoolLayer(spec))
            elif isinstance(spec, Dense):
                self.layers.append(_DenseLayer(spec.units, int(np.prod(shape_in)), rng, dtype))
            elif isinstance(spec, Activation):
                self.layers.append(_ActivationLayer(spec))
            else:
                self.layers.append(_DropoutLayer(spec))
        head_fan_in = int(np.prod(shapes[-2]))
        self.layers.append(_DenseLayer(arch.num_classes, head_fan_in, rng, dtype))

    def parameters(self):
        """(layer_index, name, array) for every learnable tensor, in order."""
        for i, layer in enumerate(self.layers):
            for name, value in layer.params().items():
                yield i, name, value

    def parameter_count(self) -> int:
        return sum(int(v.size) for _, _, v in self.parameters())

    def forward(self, x, train: bool = False, drop_rng=None):
        out = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            out = layer.forward(out, train, drop_rng)
        return out

    def loss_and_backward(self, x, y, drop_rng) -> float:
        """Softmax cross-entropy on a batch; leaves grads on each layer."""
        logits = self.forward(x, train=True, drop_rng=drop_rng)
        loss, dlogits = softmax_cross_entropy(logits, y)
        dout = dlogits
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return loss

    def predict(self, images, batch_size: int = 512) -> np.ndarray:
        preds = []
        for start in range(0, len(images), batch_size):
            logits = self.forward(images[start : start + batch_size], train=False)
            preds.append(logits.argmax(axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def build_network(arch: Architecture, seed: int, dtype=np.float32) -> Network:
    """Initialize learnable state: He-uniform weights (bound sqrt(6/fan_in)),
    zero biases, one tensor pair per Conv2D/Dense plus the head."""
    return Network(arch, seed, dtype)


def softmax_cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    n = len(y)
    picked = probs[np.arange(n), y]
    loss = float(-np.log(np.maximum(picked, 1e-30)).mean())
    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, dlogits


def confusion_matrix(true_labels, predictions, num_classes: int) -> np.ndarray:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (true_labels, predictions), 1)
    return conf


def per_class_accuracy(conf: np.ndarray) -> list[float]:
    rows = conf.sum(axis=1)
    return [float(conf[c, c]) / rows[c] if rows[c] else 0.0 for c in range(len(conf))]


def train(arch: Architecture, dataset: Dataset, config: TrainingConfig,
          progress_sink=None, cancel=None) -> TrainingRecord:
    """Minibatch SGD with momentum on softmax cross-entropy.

    After each epoch the sink receives (epoch, train_loss, val_accuracy) and
    the cancellation flag is checked; a set flag stops cleanly at the epoch
    boundary with status "cancelled". Non-finite loss stops with status
    "failed", retaining curves through the last finite epoch.
    """
    start = time.perf_counter()
    net = build_network(arch, config.seed)
    shuffle_rng = np.random.default_rng((config.seed ^ 0x5EED5EED) & 0xFFFFFFFFFFFFFFFF)
    drop_rng = np.random.default_rng((config.seed ^ 0xD80B0B0) & 0xFFFFFFFFFFFFFFFF)
    velocity = {(i, name): np.zeros_like(value) for i, name, value in net.parameters()}

    x_train, y_train = dataset.train_images, dataset.train_labels
    x_val, y_val = dataset.val_images, dataset.val_labels
    n_train = len(x_train)

    losses: list[float] = []
    accuracies: list[float] = []
    predictions = None
    status = "complete"
    epochs_run = 0

    def record():
        preds = predictions if predictions is not None else net.predict(x_val)
        conf = confusion_matrix(y_val, preds, dataset.num_classes)
        return TrainingRecord(
            train_loss=losses, val_accuracy=accuracies, predictions=preds,
            confusion=conf, per_class_accuracy=per_class_accuracy(conf),
            param_count=net.parameter_count(),
            wall_time=time.perf_counter() - start,
            status=status, epochs_run=epochs_run)

    if cancel is not None and cancel.is_set():
        status = "cancelled"
        return record()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        epoch_loss = 0.0
        diverged = False
        for bstart in range(0, n_train, config.batch_size):
            batch = order[bstart : bstart + config.batch_size]
            loss = net.loss_and_backward(x_train[batch], y_train[batch], drop_rng)
            if not math.isfinite(loss):
                diverged = True
                break
            epoch_loss += loss * len(batch)
            for i, name, value in net.parameters():
                v = velocity[(i, name)]
                v *= config.momentum
                v -= config.learning_rate * net.layers[i].grads[name]
                value += v
        if diverged:
            status = "failed"
            break
        epochs_run = epoch
        predictions = net.predict(x_val)
        losses.append(epoch_loss / n_train)
        accuracies.append(float((predictions == y_val).mean()))
        if progress_sink is not None:
            progress_sink(epoch, losses[-1], accuracies[-1])
        if cancel is not None and cancel.is_set():
            if epoch < config.epochs:
                status = "cancelled"
            break
    return record()


# ---------------------------------------------------------------------------
# gradient verification

def gradient_check(arch: Architecture, batch: tuple[np.ndarray, np.ndarray],
                   step: float = 1e-4, sample_coords: int = 200,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over a random coordinate sample, in float64.

    Relative error is |a - n| / max(1, |a|, |n|); callers compare the result
    against their tolerance. Dropout masks are frozen per evaluation by
    reseeding, so stochastic layers check consistently.
    """
    x, y = batch
    x = x.astype(np.float64)
    net = build_network(arch, seed, dtype=np.float64)

    def loss_at():
        frozen = np.random.default_rng(seed ^ 0xF00D)
        logits = net.forward(x, train=True, drop_rng=frozen)
        loss, _ = softmax_cross_entropy(logits, y)
        return loss

    net_drop = np.random.default_rng(seed ^ 0xF00D)
    logits = net.forward(x, train=True, drop_rng=net_drop)
    _, dlogits = softmax_cross_entropy(logits, y)
    dout = dlogits
    for layer in reversed(net.layers):
        dout = layer.backward(dout)

    tensors = list(net.parameters())
    sizes = [int(v.size) for _, _, v in tensors]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(sample_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)

    max_err = 0.0
    for coord in coords:
        t = int(np.searchsorted(offsets, coord, side="right")) - 1
        i, name, value = tensors[t]
        flat_index = int(coord - offsets[t])
        index = np.unravel_index(flat_index, value.shape)
        analytic = float(net.layers[i].grads[name][index])
        original = value[index]
        value[index] = original + step
        f_plus = loss_at()
        value[index] = original - step
        f_minus = loss_at()
        value[index] = original
        numeric = (f_plus - f_minus) / (2 * step)
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        max_err = max(max_err, err)
    return max_err
