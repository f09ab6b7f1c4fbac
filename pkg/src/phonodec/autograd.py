"""Minimal dense-tensor engine with reverse-mode differentiation.

Eager numpy kernels; an explicit `Tape` records every primitive in execution
order, so one reverse traversal backpropagates without a topological sort.
Parameters default to float32; reductions (softmax normalizers, losses,
means) accumulate in float64 before casting back. Passing float64 arrays
gives a double-precision graph, which the finite-difference tests use.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import NumericError, ShapeError, ValidationError

DTYPE = np.float32

_EPS_PROB = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator, dtype=DTYPE) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered record of primitives; reverse traversal = backprop."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self._records)

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._outputs

    def _add(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of `loss` into every recorded parameter's .grad."""
        if id(loss) not in self._outputs:
            raise ValidationError(
                "backward before forward: loss tensor was not produced on this tape"
            )
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        partial: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        for out, inputs, vjp in reversed(self._records):
            g = partial.pop(id(out), None)
            if g is None:
                continue
            for t, gt in zip(inputs, vjp(g)):
                if gt is None:
                    continue
                if t.requires_grad:
                    t.grad = gt if t.grad is None else t.grad + gt
                elif id(t) in self._outputs:
                    prev = partial.get(id(t))
                    partial[id(t)] = gt if prev is None else prev + gt


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._add(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural primitives


def add(a, b) -> Tensor:
    at, bt = _as_tensor(a), _as_tensor(b)
    out = at.data + bt.data

    def vjp(g):
        return _unbroadcast(g, at.shape), _unbroadcast(g, bt.shape)

    return _make(out, (at, bt), vjp)


def subtract(a, b) -> Tensor:
    at, bt = _as_tensor(a), _as_tensor(b)
    out = at.data - bt.data

    def vjp(g):
        return _unbroadcast(g, at.shape), _unbroadcast(-g, bt.shape)

    return _make(out, (at, bt), vjp)


def multiply(a, b) -> Tensor:
    at, bt = _as_tensor(a), _as_tensor(b)
    out = at.data * bt.data

    def vjp(g):
        return _unbroadcast(g * bt.data, at.shape), _unbroadcast(g * at.data, bt.shape)

    return _make(out, (at, bt), vjp)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    xt = _as_tensor(x)
    old = xt.shape
    out = xt.data.reshape(shape)

    def vjp(g):
        return (g.reshape(old),)

    return _make(out, (xt,), vjp)


def flatten(x) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    xt = _as_tensor(x)
    n = xt.shape[0]
    return reshape(xt, (n, int(np.prod(xt.shape[1:]))))


def tsum(x, axis=None) -> Tensor:
    xt = _as_tensor(x)
    out = np.asarray(xt.data.sum(axis=axis, dtype=np.float64)).astype(xt.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xt.shape).astype(xt.dtype),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, xt.shape).astype(xt.dtype),)

    return _make(out, (xt,), vjp)


def mean(x, axis=None) -> Tensor:
    xt = _as_tensor(x)
    out = np.asarray(xt.data.mean(axis=axis, dtype=np.float64)).astype(xt.dtype)
    count = xt.size if axis is None else xt.shape[axis]

    def vjp(g):
        if axis is None:
            return ((np.broadcast_to(g, xt.shape) / count).astype(xt.dtype),)
        ge = np.expand_dims(g, axis)
        return ((np.broadcast_to(ge, xt.shape) / count).astype(xt.dtype),)

    return _make(out, (xt,), vjp)


# ---------------------------------------------------------------------------
# layers


def dense(x, weights, bias) -> Tensor:
    """Affine map: x @ weights + bias. Accepts a vector or a batch of rows."""
    xt, wt, bt = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if not np.isfinite(wt.data).all():
        raise NumericError(f"non-finite weights in dense layer {wt.name!r}")
    if wt.ndim != 2:
        raise ShapeError(f"weights must be 2-D, got {wt.shape}")
    n_in, n_out = wt.shape
    if xt.shape[-1] != n_in:
        raise ShapeError(f"input width {xt.shape[-1]} != weight rows {n_in}")
    if bt.shape != (n_out,):
        raise ShapeError(f"bias shape {bt.shape} != ({n_out},)")
    batched = xt.ndim == 2
    if not batched and xt.ndim != 1:
        raise ShapeError(f"dense input must be 1-D or 2-D, got {xt.shape}")
    out = xt.data @ wt.data + bt.data

    def vjp(g):
        gx = g @ wt.data.T
        if batched:
            gw = xt.data.T @ g
            gb = g.sum(axis=0, dtype=np.float64).astype(bt.dtype)
        else:
            gw = np.outer(xt.data, g)
            gb = g
        return gx, gw.astype(wt.dtype), gb

    return _make(out, (xt, wt, bt), vjp)


def conv2d(x, kernels, stride: int = 1, padding: str = "valid",
           bias=None) -> Tensor:
    """2-D convolution over (H, W, Cin) or (N, H, W, Cin) inputs.

    Kernels are (kh, kw, Cin, Cout). `padding` is "valid" or "same"
    ("same" requires stride 1).
    """
    xt, kt = _as_tensor(x), _as_tensor(kernels)
    if kt.ndim != 4:
        raise ShapeError(f"kernels must be (kh, kw, Cin, Cout), got {kt.shape}")
    unbatched = xt.ndim == 3
    if not unbatched and xt.ndim != 4:
        raise ShapeError(f"input must be 3-D or 4-D, got {xt.shape}")
    xd = xt.data[None] if unbatched else xt.data
    n, h, w, cin = xd.shape
    kh, kw, kcin, cout = kt.shape
    if kcin != cin:
        raise ShapeError(
            f"kernel expects {kcin} input channels but input has {cin} "
            f"(input {xt.shape}, kernels {kt.shape})"
        )
    if not isinstance(stride, int) or stride < 1:
        raise ValidationError(f"stride must be a positive int, got {stride!r}")
    if padding == "same":
        if stride != 1:
            raise ValidationError("same padding requires stride 1")
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        pb, pr = kh - 1 - pt, kw - 1 - pl
        xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    elif padding == "valid":
        pt = pl = 0
        xp = xd
    else:
        raise ValidationError(f"padding must be 'valid' or 'same', got {padding!r}")
    hp, wp = xp.shape[1], xp.shape[2]
    if kh > hp or kw > wp:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * ho * wo, kh * kw * cin
    )
    kmat = kt.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(n, ho, wo, cout)

    inputs: tuple[Tensor, ...]
    if bias is not None:
        bt = _as_tensor(bias)
        if bt.shape != (cout,):
            raise ShapeError(f"bias shape {bt.shape} != ({cout},)")
        out = out + bt.data
        inputs = (xt, kt, bt)
    else:
        bt = None
        inputs = (xt, kt)

    def vjp(g):
        if unbatched:
            g = g[None]
        g2 = g.reshape(n * ho * wo, cout)
        gk = (cols.T @ g2).reshape(kh, kw, cin, cout).astype(kt.dtype)
        gwin = (g2 @ kmat.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += \
                    gwin[:, :, :, i, j, :]
        gx = gxp[:, pt:pt + h, pl:pl + w, :] if padding == "same" else gxp
        if unbatched:
            gx = gx[0]
        if bt is not None:
            gb = g.sum(axis=(0, 1, 2), dtype=np.float64).astype(bt.dtype)
            return gx, gk, gb
        return gx, gk

    return _make(out[0] if unbatched else out, inputs, vjp)


def max_pool2d(x, size) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a
    window are dropped. `size` is an int or (ph, pw)."""
    xt = _as_tensor(x)
    unbatched = xt.ndim == 3
    if not unbatched and xt.ndim != 4:
        raise ShapeError(f"input must be 3-D or 4-D, got {xt.shape}")
    xd = xt.data[None] if unbatched else xt.data
    ph, pw = (size, size) if isinstance(size, int) else tuple(size)
    n, h, w, c = xd.shape
    if ph < 1 or pw < 1 or ph > h or pw > w:
        raise ShapeError(f"pool size ({ph},{pw}) invalid for input {h}x{w}")
    ho, wo = h // ph, w // pw
    xc = xd[:, :ho * ph, :wo * pw, :]
    windows = np.ascontiguousarray(
        xc.reshape(n, ho, ph, wo, pw, c).transpose(0, 1, 3, 5, 2, 4)
    ).reshape(n, ho, wo, c, ph * pw)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        if unbatched:
            g = g[None]
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(xd)
        gx[:, :ho * ph, :wo * pw, :] = (
            gwin.reshape(n, ho, wo, c, ph, pw)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, ho * ph, wo * pw, c)
        )
        return (gx[0] if unbatched else gx,)

    return _make(out[0] if unbatched else out, (xt,), vjp)


def dilated_conv1d(x, kernels, dilation: int = 1, bias=None) -> Tensor:
    """Causal dilated 1-D convolution, zero-padded so output length equals
    input length: out[t] = sum_j kernels[j] . x[t - j*dilation].

    Input is (L, Cin) or (N, L, Cin); kernels are (k, Cin, Cout).
    """
    xt, kt = _as_tensor(x), _as_tensor(kernels)
    if kt.ndim != 3:
        raise ShapeError(f"kernels must be (k, Cin, Cout), got {kt.shape}")
    unbatched = xt.ndim == 2
    if not unbatched and xt.ndim != 3:
        raise ShapeError(f"input must be 2-D or 3-D, got {xt.shape}")
    xd = xt.data[None] if unbatched else xt.data
    n, length, cin = xd.shape
    k, kcin, cout = kt.shape
    if kcin != cin:
        raise ShapeError(
            f"kernel expects {kcin} input channels but input has {cin}"
        )
    if not isinstance(dilation, int) or dilation < 1:
        raise ValidationError(f"dilation must be a positive int, got {dilation!r}")
    if dilation * (k - 1) >= length:
        raise ValidationError(
            f"receptive span dilation*(k-1) = {dilation * (k - 1)} exceeds "
            f"sequence length {length}"
        )
    pad = (k - 1) * dilation
    xp = np.pad(xd, ((0, 0), (pad, 0), (0, 0)))
    offsets = [(k - 1 - j) * dilation for j in range(k)]
    out = np.zeros((n, length, cout), dtype=xd.dtype)
    for j, off in enumerate(offsets):
        out += xp[:, off:off + length, :] @ kt.data[j]

    inputs: tuple[Tensor, ...]
    if bias is not None:
        bt = _as_tensor(bias)
        if bt.shape != (cout,):
            raise ShapeError(f"bias shape {bt.shape} != ({cout},)")
        out = out + bt.data
        inputs = (xt, kt, bt)
    else:
        bt = None
        inputs = (xt, kt)

    def vjp(g):
        if unbatched:
            g = g[None]
        gk = np.stack([
            np.einsum("nlc,nlo->co", xp[:, off:off + length, :], g)
            for off in offsets
        ]).astype(kt.dtype)
        gxp = np.zeros_like(xp)
        for j, off in enumerate(offsets):
            gxp[:, off:off + length, :] += g @ kt.data[j].T
        gx = gxp[:, pad:, :]
        if unbatched:
            gx = gx[0]
        if bt is not None:
            gb = g.sum(axis=(0, 1), dtype=np.float64).astype(bt.dtype)
            return gx, gk, gb
        return gx, gk

    return _make(out[0] if unbatched else out, inputs, vjp)


# ---------------------------------------------------------------------------
# activations


def relu(x) -> Tensor:
    xt = _as_tensor(x)
    out = np.maximum(xt.data, 0)

    def vjp(g):
        return (g * (xt.data > 0),)

    return _make(out, (xt,), vjp)


def sigmoid(x) -> Tensor:
    xt = _as_tensor(x)
    z = xt.data.astype(np.float64)
    y64 = np.empty_like(z)
    pos = z >= 0
    y64[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    y64[~pos] = ez / (1.0 + ez)
    y = y64.astype(xt.dtype)

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _make(y, (xt,), vjp)


def tanh(x) -> Tensor:
    xt = _as_tensor(x)
    y = np.tanh(xt.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _make(y, (xt,), vjp)


def softmax(x) -> Tensor:
    """Softmax over the final axis, computed with max subtraction."""
    xt = _as_tensor(x)
    z = xt.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y64 = e / e.sum(axis=-1, keepdims=True)
    y = y64.astype(xt.dtype)

    def vjp(g):
        g64 = g.astype(np.float64)
        dot = (g64 * y64).sum(axis=-1, keepdims=True)
        return ((y64 * (g64 - dot)).astype(xt.dtype),)

    return _make(y, (xt,), vjp)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "softmax": softmax}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValidationError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


def dropout(x, rate: float, mode: str = "train",
            rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValidationError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    xt = _as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return xt
    if rng is None:
        raise ValidationError("train-mode dropout requires a seeded rng")
    keep = (rng.random(xt.shape) >= rate)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=xt.dtype)
    mask = keep.astype(xt.dtype) * scale
    out = xt.data * mask

    def vjp(g):
        return (g * mask,)

    return _make(out, (xt,), vjp)


# ---------------------------------------------------------------------------
# losses


def _check_one_hot(t: np.ndarray) -> None:
    if not (((t == 0) | (t == 1)).all() and np.all(t.sum(axis=-1) == 1)):
        raise ValidationError("cross-entropy targets must be one-hot rows")


def cross_entropy(predictions, targets) -> Tensor:
    """Mean categorical cross-entropy; predictions are probabilities clamped
    below at 1e-12, targets one-hot."""
    pt = _as_tensor(predictions)
    td = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if td.shape != pt.shape:
        raise ShapeError(f"targets {td.shape} != predictions {pt.shape}")
    _check_one_hot(td)
    rows = max(1, int(np.prod(pt.shape[:-1])))
    p64 = pt.data.astype(np.float64)
    pc = np.maximum(p64, _EPS_PROB)
    val = np.asarray(-(td * np.log(pc)).sum() / rows).astype(pt.dtype)

    def vjp(g):
        gp = np.where(p64 >= _EPS_PROB, -td / pc, 0.0) / rows
        return ((gp * g).astype(pt.dtype),)

    return _make(val, (pt,), vjp)


def mse(predictions, targets) -> Tensor:
    pt = _as_tensor(predictions)
    tt = _as_tensor(targets)
    if tt.shape != pt.shape:
        raise ShapeError(f"targets {tt.shape} != predictions {pt.shape}")
    diff = pt.data.astype(np.float64) - tt.data.astype(np.float64)
    val = np.asarray((diff * diff).mean()).astype(pt.dtype)
    scale = 2.0 / diff.size

    def vjp(g):
        gd = (diff * scale) * g
        return gd.astype(pt.dtype), (-gd).astype(tt.dtype)

    return _make(val, (pt, tt), vjp)


def loss(predictions, targets, kind: str) -> Tensor:
    if kind in ("categorical-cross-entropy", "cross-entropy"):
        return cross_entropy(predictions, targets)
    if kind in ("mean-squared-error", "mse"):
        return mse(predictions, targets)
    raise ValidationError(
        f"unknown loss kind {kind!r}; expected 'categorical-cross-entropy' "
        "or 'mean-squared-error'"
    )


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction. Holds first/second moment buffers shaped
    like their parameters and a shared step counter."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise ValidationError(
                    f"parameter {p.name!r} does not require gradients"
                )
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {p.name!r}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / b1c
            vhat = v / b2c
            p.data = p.data - self.learning_rate * mhat / (np.sqrt(vhat) + self.epsilon)
            p.grad = None


def adam_step(optimizer: Adam) -> None:
    """Apply one optimizer step; gradients must already be accumulated."""
    optimizer.step()
