"""Task networks: spatial CNN, dilated temporal CNN, deep autoencoder.

The spatial CNN reads the covariance matrix as a one-channel image; the
temporal CNN reads its flattened lower triangle as a one-channel sequence.
Their penultimate activations are concatenated (CNN part first) and, after
per-dimension min-max scaling, compressed by the autoencoder whose bottleneck
code is the classifier input.

Sizing rules for inputs smaller than the reference scale: a conv layer falls
back to same-padding when the incoming spatial extent is below the kernel,
pooling skips axes of extent 1, and dilations are capped at the largest power
of two whose receptive span fits the sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Adam, Tape, Tensor, glorot_uniform, parameter
from .exceptions import NumericError, ShapeError, ValidationError


def _rng(seed_key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_key)))


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0


class SpatialCnn:
    """Two conv blocks (valid padding, 2x2 max-pool) into a wide feature
    layer, two dense layers, and a softmax head. The feature layer's
    activations are the penultimate output."""

    def __init__(self, input_hw: tuple[int, int], n_classes: int = 2,
                 conv_channels: tuple[int, int] = (32, 64), kernel: int = 3,
                 feature_width: int = 1024, dense_widths: tuple[int, int] = (64, 128),
                 dropout_conv: float = 0.25, dropout_dense: float = 0.5,
                 in_channels: int = 1, seed: int = 0, dtype=ag.DTYPE):
        h, w = int(input_hw[0]), int(input_hw[1])
        if h < 1 or w < 1:
            raise ValidationError(f"input size {h}x{w} invalid")
        self.input_hw = (h, w)
        self.n_classes = int(n_classes)
        self.kernel = int(kernel)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.feature_width = int(feature_width)
        self.dense_widths = tuple(int(d) for d in dense_widths)
        self.dropout_conv = float(dropout_conv)
        self.dropout_dense = float(dropout_dense)
        self.in_channels = int(in_channels)
        self.seed = int(seed)
        rng = _rng(seed)
        k = self.kernel
        self._stages = []  # (padding, pool) per conv block
        self.params: list[Tensor] = []
        in_ch = self.in_channels
        for li, out_ch in enumerate(self.conv_channels):
            padding = "valid" if min(h, w) >= k else "same"
            if padding == "valid":
                h, w = h - k + 1, w - k + 1
            pool = (2 if h >= 2 else 1, 2 if w >= 2 else 1)
            h, w = h // pool[0], w // pool[1]
            fan_in, fan_out = k * k * in_ch, k * k * out_ch
            kw_ = parameter(glorot_uniform((k, k, in_ch, out_ch), fan_in, fan_out, rng, dtype),
                            name=f"conv{li + 1}_w")
            kb = parameter(np.zeros(out_ch, dtype=dtype), name=f"conv{li + 1}_b")
            self._stages.append((padding, pool))
            self.params += [kw_, kb]
            in_ch = out_ch
        self.flat_width = h * w * in_ch
        widths = [self.flat_width, self.feature_width, *self.dense_widths, self.n_classes]
        names = ["feature", "dense1", "dense2", "head"]
        self._dense: list[tuple[Tensor, Tensor]] = []
        for name, (n_in, n_out) in zip(names, zip(widths, widths[1:])):
            wt = parameter(glorot_uniform((n_in, n_out), n_in, n_out, rng, dtype),
                           name=f"{name}_w")
            bt = parameter(np.zeros(n_out, dtype=dtype), name=f"{name}_b")
            self._dense.append((wt, bt))
            self.params += [wt, bt]

    def _forward(self, x: Tensor, train: bool,
                 rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
        mode = "train" if train else "eval"
        z = x
        for (padding, pool), i in zip(self._stages, range(len(self._stages))):
            z = ag.conv2d(z, self.params[2 * i], padding=padding, bias=self.params[2 * i + 1])
            z = ag.relu(z)
            if pool != (1, 1):
                z = ag.max_pool2d(z, pool)
            z = ag.dropout(z, self.dropout_conv, mode, rng)
        z = ag.flatten(z)
        feat_w, feat_b = self._dense[0]
        feature = ag.relu(ag.dense(z, feat_w, feat_b))
        z = ag.dropout(feature, self.dropout_dense, mode, rng)
        for wt, bt in self._dense[1:-1]:
            z = ag.relu(ag.dense(z, wt, bt))
            z = ag.dropout(z, self.dropout_dense, mode, rng)
        head_w, head_b = self._dense[-1]
        probs = ag.softmax(ag.dense(z, head_w, head_b))
        return probs, feature

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.params[0].dtype)
        if x.ndim == 2 and self.in_channels == 1:
            x = x[None, :, :, None]
        elif x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:3] != self.input_hw or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"expected input (N, {self.input_hw[0]}, {self.input_hw[1]}, "
                f"{self.in_channels}), got {x.shape}"
            )
        return x

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        probs, _ = self._forward(Tensor(self._check_input(x)), False, None)
        return probs.data

    def penultimate(self, x: np.ndarray) -> np.ndarray:
        _, feat = self._forward(Tensor(self._check_input(x)), False, None)
        return feat.data

    def config_dict(self) -> dict:
        return {
            "input_hw": list(self.input_hw), "n_classes": self.n_classes,
            "conv_channels": list(self.conv_channels), "kernel": self.kernel,
            "feature_width": self.feature_width, "dense_widths": list(self.dense_widths),
            "dropout_conv": self.dropout_conv, "dropout_dense": self.dropout_dense,
            "in_channels": self.in_channels, "seed": self.seed,
        }


def _capped_dilations(n_layers: int, kernel: int, length: int) -> tuple[int, ...]:
    # largest power of two whose span (k-1)*d still fits the sequence
    if kernel - 1 >= length:
        raise ValidationError(
            f"temporal network needs input length > kernel-1 = {kernel - 1}, got {length}"
        )
    cap = 1
    while 2 * cap * (kernel - 1) < length:
        cap *= 2
    return tuple(min(2 ** i, cap) for i in range(n_layers))


class TemporalCnn:
    """Stack of causal dilated conv layers (dilations doubling per layer,
    capped to the sequence), activations cycling sigmoid/tanh/relu. The last
    layer has one channel; its length-preserving output is the penultimate
    feature and a mean-pooled readout feeds the softmax head."""

    _CYCLE = ("sigmoid", "tanh", "relu")

    def __init__(self, input_len: int, n_classes: int = 2, kernel: int = 5,
                 n_layers: int = 6, hidden_channels: int = 16,
                 dropout_mid: float = 0.25, dropout_late: float = 0.5,
                 in_channels: int = 1, seed: int = 0, dtype=ag.DTYPE):
        self.input_len = int(input_len)
        self.n_classes = int(n_classes)
        self.kernel = int(kernel)
        self.n_layers = int(n_layers)
        self.hidden_channels = int(hidden_channels)
        self.dropout_mid = float(dropout_mid)
        self.dropout_late = float(dropout_late)
        self.in_channels = int(in_channels)
        self.seed = int(seed)
        if self.n_layers < 1:
            raise ValidationError("need at least one conv layer")
        self.dilations = _capped_dilations(self.n_layers, self.kernel, self.input_len)
        self.activations = tuple(
            self._CYCLE[i % len(self._CYCLE)] for i in range(self.n_layers)
        )
        rng = _rng(seed)
        channels = [self.in_channels] + [self.hidden_channels] * (self.n_layers - 1) + [1]
        self.params: list[Tensor] = []
        self._convs: list[tuple[Tensor, Tensor]] = []
        k = self.kernel
        for li, (cin, cout) in enumerate(zip(channels, channels[1:])):
            kw_ = parameter(glorot_uniform((k, cin, cout), k * cin, k * cout, rng, dtype),
                            name=f"tconv{li + 1}_w")
            kb = parameter(np.zeros(cout, dtype=dtype), name=f"tconv{li + 1}_b")
            self._convs.append((kw_, kb))
            self.params += [kw_, kb]
        hw = parameter(glorot_uniform((1, self.n_classes), 1, self.n_classes, rng, dtype),
                       name="head_w")
        hb = parameter(np.zeros(self.n_classes, dtype=dtype), name="head_b")
        self._head = (hw, hb)
        self.params += [hw, hb]

    def _forward(self, x: Tensor, train: bool,
                 rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
        mode = "train" if train else "eval"
        z = x
        for i, ((kw_, kb), dil, act) in enumerate(
                zip(self._convs, self.dilations, self.activations)):
            z = ag.dilated_conv1d(z, kw_, dilation=dil, bias=kb)
            z = ag.activation(z, act)
            if i == 2:
                z = ag.dropout(z, self.dropout_mid, mode, rng)
            elif i == 4:
                z = ag.dropout(z, self.dropout_late, mode, rng)
        feature = ag.flatten(z)  # (N, L): final layer has one channel
        pooled = ag.mean(z, axis=1)  # (N, 1)
        hw, hb = self._head
        probs = ag.softmax(ag.dense(pooled, hw, hb))
        return probs, feature

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.params[0].dtype)
        if self.in_channels == 1:
            if x.ndim == 1:
                x = x[None, :, None]
            elif x.ndim == 2:
                x = x[:, :, None]
        if x.ndim != 3 or x.shape[1] != self.input_len or x.shape[2] != self.in_channels:
            raise ShapeError(
                f"expected input (N, {self.input_len}, {self.in_channels}), got {x.shape}"
            )
        return x

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        probs, _ = self._forward(Tensor(self._check_input(x)), False, None)
        return probs.data

    def penultimate(self, x: np.ndarray) -> np.ndarray:
        _, feat = self._forward(Tensor(self._check_input(x)), False, None)
        return feat.data

    def config_dict(self) -> dict:
        return {
            "input_len": self.input_len, "n_classes": self.n_classes,
            "kernel": self.kernel, "n_layers": self.n_layers,
            "hidden_channels": self.hidden_channels,
            "dropout_mid": self.dropout_mid, "dropout_late": self.dropout_late,
            "in_channels": self.in_channels, "seed": self.seed,
        }


class DeepAutoencoder:
    """Three encoding and three decoding dense layers. Encoder activations
    relu/relu/sigmoid (bounded codes), decoder sigmoid/relu/tanh. Dropout is
    applied after each relu layer during training."""

    _ACTS = ("relu", "relu", "sigmoid", "sigmoid", "relu", "tanh")

    def __init__(self, input_width: int, hidden: tuple[int, int] = (1024, 512),
                 bottleneck: int = 256, dropout: float = 0.25,
                 seed: int = 0, dtype=ag.DTYPE):
        self.input_width = int(input_width)
        self.hidden = (int(hidden[0]), int(hidden[1]))
        self.bottleneck = int(bottleneck)
        self.dropout = float(dropout)
        self.seed = int(seed)
        d, (w1, w2), b = self.input_width, self.hidden, self.bottleneck
        widths = [d, w1, w2, b, w2, w1, d]
        rng = _rng(seed)
        self.params: list[Tensor] = []
        self._layers: list[tuple[Tensor, Tensor]] = []
        for li, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
            wt = parameter(glorot_uniform((n_in, n_out), n_in, n_out, rng, dtype),
                           name=f"ae{li + 1}_w")
            bt = parameter(np.zeros(n_out, dtype=dtype), name=f"ae{li + 1}_b")
            self._layers.append((wt, bt))
            self.params += [wt, bt]

    def _forward(self, x: Tensor, train: bool,
                 rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
        mode = "train" if train else "eval"
        z = x
        code = None
        for i, ((wt, bt), act) in enumerate(zip(self._layers, self._ACTS)):
            z = ag.activation(ag.dense(z, wt, bt), act)
            if act == "relu":
                z = ag.dropout(z, self.dropout, mode, rng)
            if i == 2:
                code = z
        return z, code

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.params[0].dtype)
        if x.ndim == 1:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeError(
                f"expected input (N, {self.input_width}), got {x.shape}"
            )
        return x

    def encode(self, x: np.ndarray) -> np.ndarray:
        _, code = self._forward(Tensor(self._check_input(x)), False, None)
        return code.data

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        recon, _ = self._forward(Tensor(self._check_input(x)), False, None)
        return recon.data

    def config_dict(self) -> dict:
        return {
            "input_width": self.input_width, "hidden": list(self.hidden),
            "bottleneck": self.bottleneck, "dropout": self.dropout, "seed": self.seed,
        }


class MinMaxScaler:
    """Per-dimension map of the training range onto [0, 1]. Constant
    dimensions map to 0."""

    def __init__(self):
        self.min_: np.ndarray | None = None
        self.range_: np.ndarray | None = None

    def fit(self, x: np.ndarray) -> "MinMaxScaler":
        x = np.asarray(x, dtype=np.float64)
        self.min_ = x.min(axis=0)
        rng = x.max(axis=0) - self.min_
        self.range_ = np.where(rng > 0, rng, 1.0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.min_ is None:
            raise ValidationError("scaler used before fit")
        return ((np.asarray(x, dtype=np.float64) - self.min_) / self.range_)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train_supervised(net, inputs: np.ndarray, targets_onehot: np.ndarray,
                     config: TrainConfig) -> list[float]:
    """Minibatch Adam on softmax cross-entropy. Returns per-epoch mean loss."""
    x = net._check_input(inputs)
    y = np.asarray(targets_onehot)
    if y.ndim != 2 or y.shape[0] != x.shape[0] or y.shape[1] != net.n_classes:
        raise ShapeError(
            f"targets must be ({x.shape[0]}, {net.n_classes}) one-hot, got {y.shape}"
        )
    counts = y.sum(axis=0)
    if (counts < 2).any():
        lacking = int(np.argmin(counts))
        raise ValidationError(
            f"each class needs at least 2 examples; class {lacking} has {int(counts[lacking])}"
        )
    rng = _rng((config.seed, 0x7261))
    opt = Adam(net.params, learning_rate=config.learning_rate)
    history: list[float] = []
    n = x.shape[0]
    for _ in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            with Tape() as tape:
                probs, _ = net._forward(Tensor(x[idx]), True, rng)
                batch_loss = ag.cross_entropy(probs, y[idx])
                tape.backward(batch_loss)
            opt.step()
        # epoch loss measured dropout-free on the full set
        probs, _ = net._forward(Tensor(x), False, None)
        history.append(ag.cross_entropy(probs, y).item())
    if history and not np.all(np.isfinite(history)):
        raise NumericError("training loss diverged to non-finite values")
    return history


def train_autoencoder(dae: DeepAutoencoder, inputs: np.ndarray,
                      config: TrainConfig) -> list[float]:
    """Unsupervised reconstruction with mean-squared error."""
    x = dae._check_input(inputs)
    if x.shape[0] < 2:
        raise ValidationError(f"need at least 2 examples, got {x.shape[0]}")
    rng = _rng((config.seed, 0x6165))
    opt = Adam(dae.params, learning_rate=config.learning_rate)
    history: list[float] = []
    n = x.shape[0]
    for _ in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            with Tape() as tape:
                recon, _ = dae._forward(Tensor(x[idx]), True, rng)
                batch_loss = ag.mse(recon, x[idx])
                tape.backward(batch_loss)
            opt.step()
        recon, _ = dae._forward(Tensor(x), False, None)
        history.append(ag.mse(recon, x).item())
    return history


def extract_penultimate(net, inputs: np.ndarray) -> np.ndarray:
    """Dropout-free penultimate features for a batch (or single input)."""
    return net.penultimate(inputs)


def fuse(cnn_features: np.ndarray, tcnn_features: np.ndarray) -> np.ndarray:
    """Concatenate penultimate features, CNN part first."""
    a = np.asarray(cnn_features)
    b = np.asarray(tcnn_features)
    if a.ndim != b.ndim:
        raise ShapeError(f"rank mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


def encode(dae: DeepAutoencoder, fused: np.ndarray) -> np.ndarray:
    """Bottleneck code of (scaled) fused features; deterministic in eval mode."""
    return dae.encode(fused)
