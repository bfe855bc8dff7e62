"""A small convolutional network in numpy with hand-written backprop and Adam.

Architecture (input 100x100x1)::

    conv3x3(16) relu  maxpool2   -> 50x50x16
    conv3x3(32) relu  maxpool2   -> 25x25x32
    conv3x3(32) relu  avgpool5   -> 5x5x32
    flatten(800)  dense(2)

Activations are kept channel-last internally so each convolution is one
matrix product over an im2col buffer.  Everything runs in float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .shapes import ADVERSARIAL, CLEAN, ShapeDataset, gen_dataset

__all__ = [
    "PARAM_SHAPES",
    "init_params",
    "forward",
    "softmax",
    "loss_and_grad",
    "AdamState",
    "adam_step",
    "prefilter_maxpool3",
    "TrainConfig",
    "EpochRecord",
    "TrainHistory",
    "predict",
    "accuracy",
    "train",
    "save_params",
    "load_params",
]

K = 3
PARAM_SHAPES = {
    "conv1_w": (16, 1, K, K),
    "conv1_b": (16,),
    "conv2_w": (32, 16, K, K),
    "conv2_b": (32,),
    "conv3_w": (32, 32, K, K),
    "conv3_b": (32,),
    "fc_w": (2, 800),
    "fc_b": (2,),
}
_FAN_IN = {"conv1_w": 1 * K * K, "conv2_w": 16 * K * K, "conv3_w": 32 * K * K, "fc_w": 800}


def init_params(seed: int = 0) -> dict[str, np.ndarray]:
    """Weights uniform in +-sqrt(1/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(1.0 / _FAN_IN[name])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# ---------------------------------------------------------------------------
# Layers (channel-last: N, H, W, C)
# ---------------------------------------------------------------------------


def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (K, K), axis=(1, 2)).reshape(n * h * wd, c * K * K)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, w.shape[0]), cols


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    n, h, wd, c = x_shape
    f = w.shape[0]
    dmat = dout.reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ w.reshape(f, -1)).reshape(n, h, wd, c, K, K)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for di in range(K):
        for dj in range(K):
            dxp[:, di : di + h, dj : dj + wd, :] += dcols[..., di, dj]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _maxpool2_forward(x):
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    # argmax returns the first maximum in row-major window order
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool2_backward(dout, idx, x_shape):
    n, h, w, c = x_shape
    dwin = np.zeros(idx.shape + (4,))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)


def _avgpool5_forward(x):
    n, h, w, c = x.shape
    return x.reshape(n, h // 5, 5, w // 5, 5, c).mean(axis=(2, 4))


def _avgpool5_backward(dout, x_shape):
    n, h, w, c = x_shape
    g = np.broadcast_to(dout[:, :, None, :, None, :] / 25.0, (n, h // 5, 5, w // 5, 5, c))
    return g.reshape(x_shape)


def _check(arr, shape, where):
    if arr.shape != shape:
        raise AssertionError(f"{where}: expected shape {shape}, got {arr.shape}")


def forward(params, batch, return_cache: bool = False):
    """Logits of shape (N, 2) for a batch of shape (N, 1, 100, 100)."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 4 or batch.shape[1:] != (1, 100, 100):
        raise ValueError(f"expected a batch of shape (N, 1, 100, 100), got {batch.shape}")
    n = batch.shape[0]
    x0 = batch.transpose(0, 2, 3, 1)

    z1, cols1 = _conv_forward(x0, params["conv1_w"], params["conv1_b"])
    _check(z1, (n, 100, 100, 16), "conv1")
    a1 = np.maximum(z1, 0.0)
    p1, idx1 = _maxpool2_forward(a1)
    _check(p1, (n, 50, 50, 16), "pool1")

    z2, cols2 = _conv_forward(p1, params["conv2_w"], params["conv2_b"])
    _check(z2, (n, 50, 50, 32), "conv2")
    a2 = np.maximum(z2, 0.0)
    p2, idx2 = _maxpool2_forward(a2)
    _check(p2, (n, 25, 25, 32), "pool2")

    z3, cols3 = _conv_forward(p2, params["conv3_w"], params["conv3_b"])
    _check(z3, (n, 25, 25, 32), "conv3")
    a3 = np.maximum(z3, 0.0)
    p3 = _avgpool5_forward(a3)
    _check(p3, (n, 5, 5, 32), "avgpool")

    flat = p3.transpose(0, 3, 1, 2).reshape(n, 800)
    logits = flat @ params["fc_w"].T + params["fc_b"]
    _check(logits, (n, 2), "fc")
    if not return_cache:
        return logits
    cache = dict(
        x0=x0, cols1=cols1, z1=z1, a1=a1, idx1=idx1, p1=p1,
        cols2=cols2, z2=z2, a2=a2, idx2=idx2, p2=p2,
        cols3=cols3, z3=z3, a3=a3, flat=flat,
    )
    return logits, cache


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(params, batch, labels):
    """Mean softmax cross-entropy and its gradient with respect to every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be a vector of 0/1 values")
    logits, c = forward(params, batch, return_cache=True)
    n = logits.shape[0]
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for a batch of {n}")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss}; logit range [{logits.min()}, {logits.max()}]"
        )

    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {}
    grads["fc_w"] = dlogits.T @ c["flat"]
    grads["fc_b"] = dlogits.sum(axis=0)
    dflat = dlogits @ params["fc_w"]
    dp3 = dflat.reshape(n, 32, 5, 5).transpose(0, 2, 3, 1)

    da3 = _avgpool5_backward(dp3, c["a3"].shape)
    dz3 = da3 * (c["z3"] > 0)
    dp2, grads["conv3_w"], grads["conv3_b"] = _conv_backward(dz3, c["cols3"], params["conv3_w"], c["p2"].shape)

    da2 = _maxpool2_backward(dp2, c["idx2"], c["a2"].shape)
    dz2 = da2 * (c["z2"] > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(dz2, c["cols2"], params["conv2_w"], c["p1"].shape)

    da1 = _maxpool2_backward(dp1, c["idx1"], c["a1"].shape)
    dz1 = da1 * (c["z1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        dz1, c["cols1"], params["conv1_w"], c["x0"].shape, need_dx=False
    )
    return loss, {name: grads[name] for name in PARAM_SHAPES}


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; returns new ``(state, params)``."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m, v, new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m[name] = b1 * state.m[name] + (1 - b1) * g
        v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1**t)
        v_hat = v[name] / (1 - b2**t)
        new[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.lr, b1, b2, state.eps), new


# ---------------------------------------------------------------------------
# Prefilter
# ---------------------------------------------------------------------------


def prefilter_maxpool3(images):
    """3x3 sliding maximum, stride 1, zero padding; keeps the spatial size.

    Works on one image ``(H, W)`` or a stack ``(..., H, W)``.
    """
    images = np.asarray(images, dtype=float)
    pad = [(0, 0)] * (images.ndim - 2) + [(1, 1), (1, 1)]
    padded = np.pad(images, pad)
    return sliding_window_view(padded, (3, 3), axis=(-2, -1)).max(axis=(-2, -1))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_count: int = 1000


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    adversarial_accuracy: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]


def _prepare(pixels, prefilter: bool):
    x = prefilter_maxpool3(pixels) if prefilter else np.asarray(pixels, dtype=float)
    return x[:, None, :, :]


def predict(params, pixels, prefilter: bool = False, batch_size: int = 100) -> np.ndarray:
    """Class predictions (0 disk, 1 square) for a stack of 100x100 images."""
    pixels = np.asarray(pixels, dtype=float)
    out = []
    for start in range(0, len(pixels), batch_size):
        chunk = _prepare(pixels[start : start + batch_size], prefilter)
        out.append(forward(params, chunk).argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(params, ds: ShapeDataset, prefilter: bool = False) -> float:
    return float(np.mean(predict(params, ds.pixels, prefilter) == ds.labels))


def _derived_seed(*words) -> int:
    return int(np.random.SeedSequence(list(words)).generate_state(1)[0])


def eval_seeds(seed: int, epoch: int) -> tuple[int, int]:
    """Seeds of the fresh clean and adversarial evaluation sets for one epoch."""
    return _derived_seed(seed, 2, epoch, 0), _derived_seed(seed, 2, epoch, 1)


def train(train_ds: ShapeDataset, config: TrainConfig = TrainConfig(), prefilter: bool = False,
          seed: int = 0, progress=None):
    """Train from ``init_params(seed)``; returns ``(params, history)``.

    Each epoch shuffles with a permutation seeded by ``(seed, epoch)`` and is
    followed by evaluation on freshly sampled clean and adversarial sets of
    ``config.eval_count`` images with fair-coin class balance.
    """
    params = init_params(seed)
    state = AdamState.zeros_like(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    x_all = _prepare(train_ds.pixels, prefilter)
    y_all = np.asarray(train_ds.labels)
    history = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([seed, 1, epoch]).permutation(len(y_all))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grad(params, x_all[idx], y_all[idx])
            state, params = adam_step(state, params, grads)
            losses.append(loss)
        test_seed, adv_seed = eval_seeds(seed, epoch)
        test_ds = gen_dataset(config.eval_count, CLEAN, "bernoulli", test_seed)
        adv_ds = gen_dataset(config.eval_count, ADVERSARIAL, "bernoulli", adv_seed)
        record = EpochRecord(
            epoch,
            float(np.mean(losses)),
            accuracy(params, test_ds, prefilter),
            accuracy(params, adv_ds, prefilter),
        )
        history.records.append(record)
        if progress is not None:
            progress(record)
    return params, history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_NN_MAGIC = b"NNP1"


def save_params(params, path) -> None:
    """Magic, then per layer: u32 rank, u32 dims, float64 values (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_NN_MAGIC)
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(params[name], dtype="<f8")
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape} != {shape}")
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != _NN_MAGIC:
        raise ValueError(f"bad checkpoint magic {data[:4]!r}")
    pos = 4
    params = {}
    for name, shape in PARAM_SHAPES.items():
        (rank,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
        pos += 4 + 4 * rank
        if tuple(dims) != shape:
            raise ValueError(f"{name}: checkpoint dims {dims} != {shape}")
        count = int(np.prod(shape))
        if len(data) < pos + 8 * count:
            raise ValueError(f"{name}: checkpoint truncated at offset {pos}")
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes in checkpoint")
    return params
