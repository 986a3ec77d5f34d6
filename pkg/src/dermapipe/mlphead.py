"""Severity classifier: a one-hidden-layer MLP with hand-written backprop.

Forward: h = relu(x W1 + b1), inverted dropout on h in train mode,
logits = h W2 + b2. Loss is softmax cross-entropy; optimisation is Adam
with bias correction and coupled L2 weight decay on the weight matrices.
All arithmetic runs in float64 so gradient checks are tight; the on-disk
model format stores float32.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import NUM_CLASSES, SplitSpec
from .errors import (
    BadMagic,
    DimMismatch,
    MissingFeature,
    MissingLabel,
    ShapeMismatch,
    StaleCache,
    TruncatedFile,
    UnknownId,
    UnsupportedVersion,
)
from .featurestore import EmbeddingProvider
from .metrics import weighted_f1

HIDDEN_UNITS = 128

MODEL_MAGIC = b"DDXM"
MODEL_VERSION = 1

_PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class MlpParams:
    w1: np.ndarray  # (d_in, d_hidden)
    b1: np.ndarray  # (d_hidden,)
    w2: np.ndarray  # (d_hidden, n_classes)
    b2: np.ndarray  # (n_classes,)

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 16
    dropout_p: float = 0.3
    weight_decay: float = 1e-4
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.as_dict().items()},
            v={k: np.zeros_like(v) for k, v in params.as_dict().items()},
            t=0,
        )


@dataclass
class ForwardCache:
    x: np.ndarray             # (B, d_in)
    z1: np.ndarray            # pre-activation, (B, d_hidden)
    h: np.ndarray             # post-relu post-dropout, (B, d_hidden)
    drop_scale: np.ndarray | None  # mask / (1 - p), or None in eval mode
    params: MlpParams


def init_params(d_in: int, d_hidden: int = HIDDEN_UNITS,
                n_classes: int = NUM_CLASSES,
                rng: np.random.Generator | int = 0) -> MlpParams:
    """Glorot-uniform weights, zero biases. Deterministic for a fixed seed."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lim1 = np.sqrt(6.0 / (d_in + d_hidden))
    lim2 = np.sqrt(6.0 / (d_hidden + n_classes))
    return MlpParams(
        w1=rng.uniform(-lim1, lim1, size=(d_in, d_hidden)),
        b1=np.zeros(d_hidden),
        w2=rng.uniform(-lim2, lim2, size=(d_hidden, n_classes)),
        b2=np.zeros(n_classes),
    )


def forward(
    params: MlpParams,
    x: np.ndarray,
    train: bool = False,
    dropout_p: float = 0.0,
    rng: np.random.Generator | None = None,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Logits for a single vector (d_in,) or a batch (B, d_in).

    In train mode hidden units are dropped with probability ``dropout_p``
    and survivors scaled by 1/(1-p) (inverted dropout), drawing the mask
    from ``rng`` unless an explicit ``dropout_mask`` (boolean keep-mask) is
    supplied. Eval mode is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DimMismatch(f"input has shape {x.shape}, model expects (*, {params.d_in})")

    z1 = x @ params.w1 + params.b1
    h = np.maximum(z1, 0.0)

    drop_scale = None
    if train and dropout_p > 0.0:
        if dropout_mask is None:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng or explicit mask")
            dropout_mask = rng.random(h.shape) >= dropout_p
        drop_scale = dropout_mask.astype(np.float64) / (1.0 - dropout_p)
        h = h * drop_scale

    logits = h @ params.w2 + params.b2
    cache = ForwardCache(x=x, z1=z1, h=h, drop_scale=drop_scale, params=params)
    return (logits[0] if single else logits), cache


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis; rows sum to 1."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, label: int | Sequence[int] | np.ndarray
) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the logits.

    For a single (C,) logit vector: loss = -log softmax(logits)[label],
    dlogits = softmax(logits) - onehot(label). For a (B, C) batch the loss
    is the batch mean and dlogits carries the 1/B factor, so downstream
    gradients are means of per-sample gradients.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        m = logits.max()
        lse = m + np.log(np.exp(logits - m).sum())
        loss = lse - logits[int(label)]
        dlogits = softmax(logits)
        dlogits[int(label)] -= 1.0
        return float(loss), dlogits
    labels = np.asarray(label, dtype=np.int64)
    b = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    losses = lse - logits[np.arange(b), labels]
    dlogits = softmax(logits)
    dlogits[np.arange(b), labels] -= 1.0
    return float(losses.mean()), dlogits / b


def backward(cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradients for all parameters, reusing the forward dropout mask."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.ndim == 1:
        dlogits = dlogits[None, :]
    if dlogits.shape != (cache.x.shape[0], cache.params.n_classes):
        raise StaleCache(f"dlogits shape {dlogits.shape} does not match the "
                         f"cached forward pass {cache.x.shape}")
    dw2 = cache.h.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dh = dlogits @ cache.params.w2.T
    if cache.drop_scale is not None:
        dh = dh * cache.drop_scale
    dz1 = dh * (cache.z1 > 0.0)
    dw1 = cache.x.T @ dz1
    db1 = dz1.sum(axis=0)
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def adam_step(
    params: MlpParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias correction, in place.

    Weight decay is coupled L2: lambda * theta is added to the gradient of
    the weight matrices (never the biases) before the moment update.
    """
    tensors = params.as_dict()
    for name in _PARAM_NAMES:
        if grads[name].shape != tensors[name].shape:
            raise ShapeMismatch(f"gradient {name} has shape {grads[name].shape}, "
                                f"parameter has {tensors[name].shape}")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name in _PARAM_NAMES:
        g = np.asarray(grads[name], dtype=np.float64)
        if config.weight_decay > 0.0 and name in ("w1", "w2"):
            g = g + config.weight_decay * tensors[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        tensors[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params, state


def predict(params: MlpParams, x: np.ndarray) -> int:
    """Argmax of eval-mode logits; ties go to the lowest class index."""
    logits, _ = forward(params, x)
    return int(np.argmax(logits))


def predict_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    logits, _ = forward(params, np.atleast_2d(x))
    return np.argmax(logits, axis=1)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_weighted_f1: float


def _gather(features: EmbeddingProvider, ids: Sequence[str],
            labels: Mapping[str, int]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for rid in ids:
        try:
            vec = features.get(rid)
        except (UnknownId, KeyError):
            raise MissingFeature(rid) from None
        if rid not in labels:
            raise MissingLabel(rid)
        xs.append(np.asarray(vec, dtype=np.float64))
        ys.append(labels[rid])
    return np.stack(xs) if xs else np.empty((0, features.dim)), np.asarray(ys, dtype=np.int64)


def train(
    features: EmbeddingProvider,
    split: SplitSpec,
    labels: Mapping[str, int],
    config: TrainConfig,
) -> tuple[MlpParams, list[EpochLog]]:
    """Minibatch training over the split's train ids.

    One seeded generator drives initialisation, the per-epoch shuffles and
    the dropout masks, in that order, so identical configs give bitwise
    identical parameters. The last partial batch is kept and its gradient
    averaged over its true size. Returns the final-epoch parameters (no
    early stopping) and a per-epoch log of train loss and validation
    weighted F1.
    """
    x_train, y_train = _gather(features, split.train_ids, labels)
    x_val, y_val = _gather(features, split.val_ids, labels)
    n = x_train.shape[0]

    gen = np.random.default_rng(config.seed)
    params = init_params(features.dim, HIDDEN_UNITS, NUM_CLASSES, rng=gen)
    state = AdamState.zeros_like(params)
    log: list[EpochLog] = []

    for epoch in range(config.epochs):
        order = gen.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits, cache = forward(params, x_train[idx], train=True,
                                    dropout_p=config.dropout_p, rng=gen)
            loss, dlogits = softmax_cross_entropy(logits, y_train[idx])
            grads = backward(cache, dlogits)
            adam_step(params, grads, state, config)
            total += loss * len(idx)
        train_loss = total / n if n else float("nan")
        val_f1 = weighted_f1(y_val.tolist(), predict_batch(params, x_val).tolist()) \
            if len(y_val) else float("nan")
        log.append(EpochLog(epoch=epoch, train_loss=train_loss, val_weighted_f1=val_f1))
    return params, log


def write_training_log(log: Sequence[EpochLog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_weighted_f1"])
        for entry in log:
            writer.writerow([entry.epoch, repr(entry.train_loss),
                             repr(entry.val_weighted_f1)])


def save_params(params: MlpParams, path: str | Path) -> None:
    """Serialize as little-endian float32 (header: magic, version, D, H, C)."""
    head = struct.pack("<4sIIII", MODEL_MAGIC, MODEL_VERSION,
                       params.d_in, params.d_hidden, params.n_classes)
    body = b"".join(
        np.ascontiguousarray(t, dtype="<f4").tobytes()
        for t in (params.w1, params.b1, params.w2, params.b2)
    )
    Path(path).write_bytes(head + body)


def load_params(path: str | Path) -> MlpParams:
    p = Path(path)
    data = p.read_bytes()
    if len(data) < 4 or data[:4] != MODEL_MAGIC:
        raise BadMagic(f"{p}: not a model file")
    if len(data) < 20:
        raise TruncatedFile(f"{p}: header incomplete")
    _, version, d_in, d_hidden, n_classes = struct.unpack_from("<4sIIII", data, 0)
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f"{p}: version {version} (supported: {MODEL_VERSION})")
    sizes = (d_in * d_hidden, d_hidden, d_hidden * n_classes, n_classes)
    expected = 20 + 4 * sum(sizes)
    if len(data) != expected:
        raise TruncatedFile(f"{p}: {len(data)} bytes, expected {expected}")
    offset = 20
    tensors = []
    for count in sizes:
        tensors.append(np.frombuffer(data, dtype="<f4", count=count, offset=offset)
                       .astype(np.float64))
        offset += 4 * count
    return MlpParams(
        w1=tensors[0].reshape(d_in, d_hidden),
        b1=tensors[1],
        w2=tensors[2].reshape(d_hidden, n_classes),
        b2=tensors[3],
    )
