"""Shallow CNN patch classifier, written directly on numpy.

Each block is conv(3x3, same padding) -> ReLU -> batch-norm -> dropout ->
2x2 max-pool (floor). After the last block the activations are flattened
(NHWC order) into a two-way dense layer and a softmax. Class 0 is live,
class 1 is spoof.

Parameters are held as float32. Every routine computes in the dtype of the
arrays it is given, so the gradient check runs the same code in float64.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fpliveness.metrics import PatchScore

log = logging.getLogger(__name__)

MAGIC = b"FPLVCNN\0"
FORMAT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ModelFormatError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class CnnConfig:
    input_side: int = 82
    block_filters: tuple = (64, 128, 256, 512)
    block_dropout: tuple = (0.20, 0.30, 0.40, 0.50)
    kernel_size: int = 3
    pool: int = 2
    classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "block_filters", tuple(int(f) for f in self.block_filters))
        object.__setattr__(self, "block_dropout", tuple(float(d) for d in self.block_dropout))
        if len(self.block_filters) != len(self.block_dropout) or not self.block_filters:
            raise ValueError("block_filters and block_dropout must be non-empty and of equal length")
        if any(f < 1 for f in self.block_filters):
            raise ValueError("filter counts must be positive")
        if any(not 0.0 <= d < 1.0 for d in self.block_dropout):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.pool < 1:
            raise ValueError("pool must be >= 1")
        if self.classes != 2:
            raise ValueError("classes is fixed at 2")
        if self.final_side < 1:
            raise ValueError(f"input_side {self.input_side} vanishes after {len(self.block_filters)} poolings")

    @property
    def final_side(self) -> int:
        side = self.input_side
        for _ in self.block_filters:
            side //= self.pool
        return side

    @property
    def dense_inputs(self) -> int:
        return self.block_filters[-1] * self.final_side ** 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class ConvBlock:
    kernel: np.ndarray  # (k, k, c_in, c_out)
    bias: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


TRAINABLE_BLOCK = ("kernel", "bias", "gamma", "beta")
STATS_BLOCK = ("running_mean", "running_var")


@dataclass
class ModelWeights:
    config: CnnConfig
    blocks: list
    dense_w: np.ndarray  # (dense_inputs, 2)
    dense_b: np.ndarray

    def named_tensors(self, trainable_only=False):
        """``(name, array)`` pairs in declaration order."""
        names = TRAINABLE_BLOCK if trainable_only else TRAINABLE_BLOCK + STATS_BLOCK
        out = []
        for i, b in enumerate(self.blocks):
            out.extend((f"block{i}.{n}", getattr(b, n)) for n in names)
        out.append(("dense.w", self.dense_w))
        out.append(("dense.b", self.dense_b))
        return out

    def astype(self, dtype) -> "ModelWeights":
        blocks = [ConvBlock(*(getattr(b, n).astype(dtype) for n in TRAINABLE_BLOCK + STATS_BLOCK)) for b in self.blocks]
        return ModelWeights(self.config, blocks, self.dense_w.astype(dtype), self.dense_b.astype(dtype))

    def copy(self) -> "ModelWeights":
        return self.astype(self.dense_w.dtype)


def init_model(config: CnnConfig = CnnConfig(), seed: int = 0) -> ModelWeights:
    """He-uniform conv kernels, LeCun-uniform dense weights, zero biases, identity batch-norm."""
    rng = np.random.default_rng(seed)
    k = config.kernel_size
    blocks = []
    c_in = 1
    for f in config.block_filters:
        limit = math.sqrt(6.0 / (k * k * c_in))
        blocks.append(
            ConvBlock(
                kernel=rng.uniform(-limit, limit, size=(k, k, c_in, f)).astype(np.float32),
                bias=np.zeros(f, np.float32),
                gamma=np.ones(f, np.float32),
                beta=np.zeros(f, np.float32),
                running_mean=np.zeros(f, np.float32),
                running_var=np.ones(f, np.float32),
            )
        )
        c_in = f
    limit = math.sqrt(3.0 / config.dense_inputs)
    dense_w = rng.uniform(-limit, limit, size=(config.dense_inputs, config.classes)).astype(np.float32)
    return ModelWeights(config, blocks, dense_w, np.zeros(config.classes, np.float32))


# --- layers -----------------------------------------------------------------

def _conv_forward(x, kernel, bias):
    n, h, w, c = x.shape
    k = kernel.shape[0]
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    # (n, h, w, c, k, k) -> rows ordered (c, ky, kx)
    cols = sliding_window_view(xp, (k, k), axis=(1, 2)).reshape(n * h * w, c * k * k)
    wmat = kernel.transpose(2, 0, 1, 3).reshape(c * k * k, -1)
    out = (cols @ wmat + bias).reshape(n, h, w, -1)
    return out, cols


def _conv_backward(dout, cols, x_shape, kernel):
    n, h, w, c = x_shape
    k = kernel.shape[0]
    r = k // 2
    f = kernel.shape[3]
    d2 = dout.reshape(-1, f)
    dkernel = (cols.T @ d2).reshape(c, k, k, f).transpose(1, 2, 0, 3)
    dbias = d2.sum(axis=0)
    wmat = kernel.transpose(2, 0, 1, 3).reshape(c * k * k, f)
    dcols = (d2 @ wmat.T).reshape(n, h, w, c, k, k)
    dxp = np.zeros((n, h + 2 * r, w + 2 * r, c), dtype=dout.dtype)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky : ky + h, kx : kx + w, :] += dcols[..., ky, kx]
    return dxp[:, r : r + h, r : r + w, :], dkernel, dbias


def _pool_forward(x, p):
    n, h, w, c = x.shape
    ho, wo = h // p, w // p
    xr = x[:, : ho * p, : wo * p, :].reshape(n, ho, p, wo, p, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, p * p)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape, p):
    n, h, w, c = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dxr = np.zeros((n, ho, wo, c, p * p), dtype=dout.dtype)
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, : ho * p, : wo * p, :] = dxr.reshape(n, ho, wo, c, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * p, wo * p, c)
    return dx


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def prepare_batch(batch, side: int, dtype=np.float32) -> np.ndarray:
    """Stack patches (GrayImage, arrays, or Patch objects) into an ``(n, side, side, 1)`` array in [0, 1]."""
    arrs = []
    for item in batch:
        item = getattr(item, "pixels", item)
        item = getattr(item, "pixels", item)
        a = np.asarray(item)
        if a.shape != (side, side):
            raise ValueError(f"patch shape {a.shape} does not match input side {side}")
        arrs.append(a)
    if not arrs:
        raise ValueError("empty batch")
    return (np.stack(arrs).astype(dtype) / dtype(255.0))[..., None]


def _forward(model: ModelWeights, x, *, train=False, rng=None, batch_stats=None, update_stats=False):
    """Return ``(logits, caches)``.

    ``batch_stats`` selects batch-norm statistics (defaults to ``train``);
    dropout is applied only when ``train`` is true and ``rng`` is given.
    """
    cfg = model.config
    if batch_stats is None:
        batch_stats = train
    caches = []
    a = x
    dt = x.dtype.type
    for i, b in enumerate(model.blocks):
        z, cols = _conv_forward(a, b.kernel, b.bias)
        r = np.maximum(z, 0)
        if batch_stats:
            mu = r.mean(axis=(0, 1, 2))
            var = r.var(axis=(0, 1, 2))
            if update_stats:
                b.running_mean[...] = BN_MOMENTUM * b.running_mean + (1 - BN_MOMENTUM) * mu
                b.running_var[...] = BN_MOMENTUM * b.running_var + (1 - BN_MOMENTUM) * var
        else:
            mu, var = b.running_mean, b.running_var
        inv = 1.0 / np.sqrt(var + dt(BN_EPS))
        xhat = (r - mu) * inv
        y = b.gamma * xhat + b.beta
        rate = cfg.block_dropout[i]
        mask = None
        if train and rng is not None and rate > 0:
            mask = (rng.random(y.shape) >= rate).astype(y.dtype) / dt(1.0 - rate)
            y = y * mask
        pooled, idx = _pool_forward(y, cfg.pool)
        caches.append((a.shape, cols, z, xhat, inv, mask, y.shape, idx))
        a = pooled
    flat = a.reshape(a.shape[0], -1)
    logits = flat @ model.dense_w + model.dense_b
    return logits, (caches, flat, a.shape, batch_stats)


def _backward(model: ModelWeights, dlogits, cache):
    caches, flat, last_shape, batch_stats = cache
    grads = {"dense.w": flat.T @ dlogits, "dense.b": dlogits.sum(axis=0)}
    da = (dlogits @ model.dense_w.T).reshape(last_shape)
    for i in reversed(range(len(model.blocks))):
        b = model.blocks[i]
        x_shape, cols, z, xhat, inv, mask, y_shape, idx = caches[i]
        dy = _pool_backward(da, idx, y_shape, model.config.pool)
        if mask is not None:
            dy = dy * mask
        grads[f"block{i}.gamma"] = (dy * xhat).sum(axis=(0, 1, 2))
        grads[f"block{i}.beta"] = dy.sum(axis=(0, 1, 2))
        dxhat = dy * b.gamma
        if batch_stats:
            m = dxhat.shape[0] * dxhat.shape[1] * dxhat.shape[2]
            dr = inv / m * (
                m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
            )
        else:
            dr = dxhat * inv
        dz = dr * (z > 0)
        da, dk, dbias = _conv_backward(dz, cols, x_shape, b.kernel)
        grads[f"block{i}.kernel"] = dk
        grads[f"block{i}.bias"] = dbias
    return grads


def _loss(logits, labels):
    probs = _softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = -np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    return float(loss), dlogits / n, probs


def predict_proba(model: ModelWeights, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Infer-mode float64 softmax outputs ``(n, 2)`` for a prepared batch; deterministic."""
    out = []
    for start in range(0, x.shape[0], batch_size):
        logits, _ = _forward(model, x[start : start + batch_size], train=False)
        # float64 softmax keeps per-fingerprint sums within 1e-6 of the patch count
        out.append(_softmax(logits.astype(np.float64)))
    return np.concatenate(out, axis=0)


def forward(model: ModelWeights, batch, mode: str = "infer", rng=None) -> list[PatchScore]:
    """Score patches; ``mode`` is ``"infer"`` or ``"train"`` (batch statistics plus dropout)."""
    x = prepare_batch(batch, model.config.input_side, model.dense_w.dtype.type)
    if mode == "infer":
        probs = predict_proba(model, x)
    elif mode == "train":
        logits, _ = _forward(model, x, train=True, rng=rng if rng is not None else np.random.default_rng(0))
        probs = _softmax(logits)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return [PatchScore(float(p[0]), float(p[1])) for p in probs.astype(np.float64)]


# --- training ---------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def train(model: ModelWeights, x, labels, config: TrainConfig = TrainConfig(), *, callback=None):
    """Adam on sparse categorical cross-entropy; returns ``(weights, history)``.

    ``x`` is a prepared ``(n, side, side, 1)`` array or a sequence of patches.
    The input model is left untouched. History accuracy is measured on the
    training batches as they are seen (dropout active).
    """
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        x = prepare_batch(x, model.config.input_side)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != labels.shape[0]:
        raise ValueError("x and labels differ in length")
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise ValueError("training set needs at least one sample of each class")
    model = model.copy()
    dt = model.dense_w.dtype.type
    rng = np.random.default_rng(config.seed)
    params = dict(model.named_tensors(trainable_only=True))
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    step = 0
    history = []
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx].astype(dt, copy=False), labels[idx]
            logits, cache = _forward(model, xb, train=True, rng=rng, update_stats=True)
            loss, dlogits, probs = _loss(logits, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step + 1}")
            grads = _backward(model, dlogits, cache)
            step += 1
            lr_t = config.learning_rate * math.sqrt(1 - config.beta2 ** step) / (1 - config.beta1 ** step)
            for k, p in params.items():
                g = grads[k]
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                v[k] = config.beta2 * v[k] + (1 - config.beta2) * g * g
                if lr_t:
                    p -= (lr_t * m[k] / (np.sqrt(v[k]) + config.epsilon)).astype(p.dtype)
            total_loss += loss * len(idx)
            correct += int((probs.argmax(axis=1) == yb).sum())
        stats = EpochStats(epoch, total_loss / n, correct / n)
        history.append(stats)
        log.info("epoch %d loss %.4f accuracy %.4f", epoch, stats.loss, stats.accuracy)
        if callback is not None:
            callback(stats)
    return model, history


# --- gradient check ---------------------------------------------------------

def loss_and_grads(model: ModelWeights, x, labels, *, batch_stats=False):
    logits, cache = _forward(model, x, train=False, batch_stats=batch_stats)
    loss, dlogits, _ = _loss(logits, labels)
    return loss, _backward(model, dlogits, cache)


def gradient_check(model: ModelWeights, x, labels, *, step: float = 1e-3, batch_stats: bool = False) -> float:
    """Max relative error between backprop and central finite differences.

    Runs in float64 over every trainable parameter. Dropout is never applied;
    batch-norm uses running statistics unless ``batch_stats`` is set, in which
    case the whole batch ``x`` defines the statistics.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    m64 = model.astype(np.float64)
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        x = prepare_batch(x, model.config.input_side, np.float64)
    x = x.astype(np.float64)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    _, grads = loss_and_grads(m64, x, labels, batch_stats=batch_stats)
    worst = 0.0
    for name, p in m64.named_tensors(trainable_only=True):
        g = grads[name]
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp, _ = loss_and_grads(m64, x, labels, batch_stats=batch_stats)
            flat[j] = orig - step
            lm, _ = loss_and_grads(m64, x, labels, batch_stats=batch_stats)
            flat[j] = orig
            num = (lp - lm) / (2 * step)
            ana = g.reshape(-1)[j]
            denom = max(abs(num), abs(ana), 1e-7)
            worst = max(worst, abs(num - ana) / denom)
    return worst


# --- persistence ------------------------------------------------------------

def _serialize(model: ModelWeights) -> bytes:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(cfg)), cfg]
    tensors = model.named_tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def model_checksum(model: ModelWeights) -> str:
    return hashlib.sha256(_serialize(model)).hexdigest()


def save_model(model: ModelWeights, path) -> None:
    Path(path).write_bytes(_serialize(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("corrupt file: unexpected end of data")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> ModelWeights:
    data = Path(path).read_bytes()
    rd = _Reader(data)
    if rd.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError("corrupt file: bad magic")
    (version,) = rd.unpack("<H")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"version mismatch: file has {version}, expected {FORMAT_VERSION}")
    (clen,) = rd.unpack("<I")
    try:
        cfg = CnnConfig(**json.loads(rd.take(clen)))
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"corrupt file: bad config: {exc}") from exc
    template = init_model(cfg, seed=0)
    expected = template.named_tensors()
    (count,) = rd.unpack("<I")
    if count != len(expected):
        raise ModelFormatError("corrupt file: tensor count mismatch")
    loaded = {}
    for name, ref in expected:
        (nlen,) = rd.unpack("<H")
        got = rd.take(nlen).decode(errors="replace")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        if got != name or tuple(shape) != ref.shape:
            raise ModelFormatError(f"corrupt file: tensor {got} {shape} where {name} {ref.shape} expected")
        raw = rd.take(4 * int(np.prod(shape, dtype=np.int64)))
        loaded[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if rd.pos != len(data):
        raise ModelFormatError("corrupt file: trailing bytes")
    blocks = [
        ConvBlock(*(loaded[f"block{i}.{n}"] for n in TRAINABLE_BLOCK + STATS_BLOCK))
        for i in range(len(cfg.block_filters))
    ]
    return ModelWeights(cfg, blocks, loaded["dense.w"], loaded["dense.b"])


# --- baseline ---------------------------------------------------------------

def baseline_classify(patch, threshold: float = 128.0) -> PatchScore:
    """Score from mean intensity alone: darker than ``threshold`` leans live."""
    pixels = getattr(patch, "pixels", patch)
    pixels = getattr(pixels, "pixels", pixels)
    mean = float(np.asarray(pixels, dtype=np.float64).mean())
    z = (threshold - mean) / 16.0
    live = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return PatchScore(live, 1.0 - live)
