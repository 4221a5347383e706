"""Single-hidden-layer ReLU classifier trained with Adam, in float64 numpy.

Inputs are parity samples: a one-hot control block followed by task bits.
The first layer exploits the one-hot block (a column gather instead of a
matmul); this is algebraically identical to the dense product.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .parity import SampleBatch
from .seeds import stream

SEGMENTS = ("W1", "b1", "W2", "b2")
N_OUT = 2


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class MlpModel:
    W1: np.ndarray  # (width, input_dim)
    b1: np.ndarray  # (width,)
    W2: np.ndarray  # (2, width)
    b2: np.ndarray  # (2,)

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, input_dim: int, width: int) -> "MlpModel":
        parts = split_flat(np.asarray(flat, dtype=np.float64), input_dim, width)
        return cls(*(parts[name].copy() for name in SEGMENTS))

    def copy(self) -> "MlpModel":
        return MlpModel(*(p.copy() for p in self.params()))


def param_count(input_dim: int, width: int) -> int:
    return input_dim * width + width + N_OUT * width + N_OUT


def segment_shapes(input_dim: int, width: int) -> dict[str, tuple[int, ...]]:
    return {"W1": (width, input_dim), "b1": (width,), "W2": (N_OUT, width), "b2": (N_OUT,)}


def split_flat(flat: np.ndarray, input_dim: int, width: int) -> dict[str, np.ndarray]:
    """Views of a flat parameter-shaped vector (or matrix of row vectors)."""
    shapes = segment_shapes(input_dim, width)
    expected = param_count(input_dim, width)
    if flat.shape[-1] != expected:
        raise ShapeError(f"flat length {flat.shape[-1]} != param_count {expected}")
    out, start = {}, 0
    lead = flat.shape[:-1]
    for name in SEGMENTS:
        size = int(np.prod(shapes[name]))
        out[name] = flat[..., start : start + size].reshape(*lead, *shapes[name])
        start += size
    return out


@dataclass
class GradVector:
    """Flat gradient with its (W1, b1, W2, b2) layout."""

    flat: np.ndarray
    input_dim: int
    width: int

    def __post_init__(self):
        if self.flat.shape != (param_count(self.input_dim, self.width),):
            raise ShapeError(f"gradient of shape {self.flat.shape} does not match the layout")

    def segments(self) -> dict[str, np.ndarray]:
        return split_flat(self.flat, self.input_dim, self.width)

    @classmethod
    def from_segments(cls, W1, b1, W2, b2) -> "GradVector":
        flat = np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(W2), np.ravel(b2)])
        return cls(flat, W1.shape[1], W1.shape[0])


def init_model(input_dim: int, width: int, seed: int, zero_output: bool = False) -> MlpModel:
    """Uniform Kaiming-style weights, zero biases.

    Weights are U(-sqrt(6/fan_in), sqrt(6/fan_in)). With ``zero_output`` the
    second layer starts at zero so the untrained network predicts 50/50.
    """
    if width < 1 or input_dim < 1:
        raise ShapeError(f"width and input_dim must be >= 1 (got {width}, {input_dim})")
    rng = stream(seed, "init", input_dim, width)
    lim1 = np.sqrt(6.0 / input_dim)
    lim2 = np.sqrt(6.0 / width)
    W1 = rng.uniform(-lim1, lim1, size=(width, input_dim))
    W2 = rng.uniform(-lim2, lim2, size=(N_OUT, width))
    if zero_output:
        W2[:] = 0.0
    return MlpModel(W1, np.zeros(width), W2, np.zeros(N_OUT))


# ---------------------------------------------------------------------------
# forward / backward


def _check(model: MlpModel, batch: SampleBatch):
    if model.input_dim != batch.n_tasks + batch.task_bits.shape[1]:
        raise ShapeError(
            f"model expects input_dim={model.input_dim}, batch has "
            f"{batch.n_tasks} + {batch.task_bits.shape[1]}"
        )


def _hidden_pre(model: MlpModel, batch: SampleBatch) -> np.ndarray:
    W1 = model.W1
    pre = batch.task_bits.astype(np.float64) @ W1[:, batch.n_tasks :].T
    ctrl_rows = np.ascontiguousarray(W1[:, : batch.n_tasks].T) + model.b1
    pre += ctrl_rows[batch.subtask_ids - 1]
    return pre


def _control_scatter(batch: SampleBatch, rows: np.ndarray) -> np.ndarray:
    """(n_tasks, k) sums of ``rows`` grouped by subtask (one-hot transpose product)."""
    m = len(batch)
    onehot_t = sp.csr_matrix(
        (np.ones(m), (batch.subtask_ids - 1, np.arange(m))), shape=(batch.n_tasks, m)
    )
    return np.asarray(onehot_t @ rows)


def _forward(model: MlpModel, batch: SampleBatch):
    _check(model, batch)
    pre = _hidden_pre(model, batch)
    h = np.maximum(pre, 0.0)
    logits = h @ model.W2.T + model.b2
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    labels = batch.labels.astype(np.int64)
    losses = lse - logits[np.arange(len(labels)), labels]
    return pre, h, logits, lse, losses


def forward_loss(model: MlpModel, batch: SampleBatch) -> tuple[float, np.ndarray]:
    """Mean and per-sample cross-entropy in nats."""
    losses = _forward(model, batch)[-1]
    return float(losses.mean()), losses


def predict_logits(model: MlpModel, batch: SampleBatch) -> np.ndarray:
    return _forward(model, batch)[2]


def _output_error(logits, lse, labels) -> np.ndarray:
    """d loss_i / d logits_i = softmax - onehot."""
    err = np.exp(logits - lse[:, None])
    err[np.arange(len(labels)), labels] -= 1.0
    return err


def backward(model: MlpModel, batch: SampleBatch) -> GradVector:
    """Gradient of the mean cross-entropy over ``batch``."""
    grad, _ = loss_and_grad(model, batch)
    return grad


def loss_and_grad(model: MlpModel, batch: SampleBatch) -> tuple[GradVector, float]:
    pre, h, logits, lse, losses = _forward(model, batch)
    m = len(batch)
    err = _output_error(logits, lse, batch.labels.astype(np.int64)) / m
    gW2 = err.T @ h
    gb2 = err.sum(axis=0)
    dh = err @ model.W2
    np.multiply(dh, pre > 0, out=dh)
    gW1 = np.empty_like(model.W1)
    gW1[:, batch.n_tasks :] = dh.T @ batch.task_bits.astype(np.float64)
    gW1[:, : batch.n_tasks] = _control_scatter(batch, dh).T
    gb1 = dh.sum(axis=0)
    return GradVector.from_segments(gW1, gb1, gW2, gb2), float(losses.mean())


def per_sample_factors(model: MlpModel, batch: SampleBatch):
    """Per-sample backprop factors (hidden error, hidden activation, output error, loss).

    The gradient of sample i is W1: outer(dh_i, x_i), b1: dh_i,
    W2: outer(e_i, h_i), b2: e_i.
    """
    pre, h, logits, lse, losses = _forward(model, batch)
    err = _output_error(logits, lse, batch.labels.astype(np.int64))
    dh = (err @ model.W2) * (pre > 0)
    return dh, h, err, losses


def per_sample_grads(model: MlpModel, batch: SampleBatch) -> np.ndarray:
    """(m, param_count) matrix whose rows are single-sample gradients."""
    dh, h, err, _ = per_sample_factors(model, batch)
    x = batch.inputs.astype(np.float64)
    m = len(batch)
    out = np.empty((m, param_count(model.input_dim, model.width)))
    seg = split_flat(out, model.input_dim, model.width)
    np.multiply(dh[:, :, None], x[:, None, :], out=seg["W1"])
    seg["b1"][:] = dh
    np.multiply(err[:, :, None], h[:, None, :], out=seg["W2"])
    seg["b2"][:] = err
    return out


def per_sample_grad(model: MlpModel, batch: SampleBatch, index: int = 0) -> GradVector:
    """Gradient of the loss on the single sample ``batch[index]``."""
    one = batch.take(slice(index, index + 1))
    return GradVector(per_sample_grads(model, one)[0], model.input_dim, model.width)


def per_sample_gram(model: MlpModel, batch: SampleBatch) -> np.ndarray:
    """G_ij = g_i . g_j without materialising the gradients.

    Uses (u x^T) . (v y^T) = (u . v)(x . y) for every outer-product block.
    """
    dh, h, err, _ = per_sample_factors(model, batch)
    ids = batch.subtask_ids
    bits = batch.task_bits.astype(np.float64)
    xx = bits @ bits.T + (ids[:, None] == ids[None, :])
    return (dh @ dh.T) * (xx + 1.0) + (err @ err.T) * (h @ h.T + 1.0)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, model: MlpModel, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        zeros = [np.zeros_like(p) for p in model.params()]
        return cls([z.copy() for z in zeros], zeros, 0, lr, beta1, beta2, eps)

    def hyperparameters(self) -> dict[str, float]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(model: MlpModel, state: AdamState, grad: GradVector) -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    if grad.input_dim != model.input_dim or grad.width != model.width:
        raise ShapeError("gradient layout does not match the model")
    if not np.all(np.isfinite(grad.flat)):
        raise NonFiniteGradient(f"non-finite gradient at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    segs = grad.segments()
    for p, m, v, name in zip(model.params(), state.first, state.second, SEGMENTS):
        g = segs[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"QMLP"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIII")


def save_checkpoint(model: MlpModel, path) -> None:
    """Header (magic, version, input_dim, width) then little-endian f64 W1, b1, W2, b2."""
    payload = _CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, model.input_dim, model.width)
    payload += model.flatten().astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def load_checkpoint(path) -> MlpModel:
    raw = Path(path).read_bytes()
    magic, version, input_dim, width = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_CKPT_HEADER.size)
    return MlpModel.from_flat(flat.astype(np.float64), input_dim, width)


@dataclass
class TrainState:
    """Model plus optimiser, as advanced by one training loop."""

    model: MlpModel
    adam: AdamState = field(default=None)

    def __post_init__(self):
        if self.adam is None:
            self.adam = AdamState.fresh(self.model)

    def step(self, batch: SampleBatch) -> float:
        grad, loss = loss_and_grad(self.model, batch)
        adam_step(self.model, self.adam, grad)
        return loss
