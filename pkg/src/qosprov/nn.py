"""Small fully connected Q-network trained with plain SGD on squared error.

Weights are stored as ``(fan_in, fan_out)`` float64 matrices so a batch of row
vectors propagates as ``x @ W + b``. Hidden layers use a configurable
activation; the output layer is linear.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, FormatError, NonFiniteLoss

CHECKPOINT_MAGIC = b"QGN1"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.001
    batch_size: int = 10

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - a * a


class MlpNetwork:
    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                 activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        if len(weights) != len(biases) or not weights:
            raise DimensionMismatch("need one bias vector per weight matrix")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.activation = activation
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DimensionMismatch(f"layer {i} expects {w.shape[0]} inputs, "
                                        f"previous layer emits {self.weights[i - 1].shape[1]}")

    @classmethod
    def create(cls, layer_sizes: Sequence[int], rng: np.random.Generator,
               activation: str = "relu") -> "MlpNetwork":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], activation: str = "relu") -> "MlpNetwork":
        return cls([np.zeros((i, o)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])],
                   [np.zeros(o) for o in layer_sizes[1:]], activation)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in checkpoint order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for a single observation or a batch of row vectors."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights[0].shape[0]:
            raise DimensionMismatch(f"input length {x.shape[-1]}, network expects "
                                    f"{self.weights[0].shape[0]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i != last:
                x = _activate(self.activation, x)
        return x

    def _check_batch(self, inputs, targets, actions):
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.intp)
        if inputs.ndim != 2 or inputs.shape[1] != self.weights[0].shape[0]:
            raise DimensionMismatch(f"inputs shape {inputs.shape}")
        if not (len(inputs) == len(targets) == len(actions)):
            raise DimensionMismatch(f"batch lengths differ: {len(inputs)}, {len(targets)}, "
                                    f"{len(actions)}")
        n_out = self.weights[-1].shape[1]
        if actions.size and (actions.min() < 0 or actions.max() >= n_out):
            raise DimensionMismatch(f"action index outside [0, {n_out})")
        return inputs, targets, actions

    def loss(self, inputs, targets, actions) -> float:
        """Mean of (Q(s, a) - y)^2 over the batch."""
        inputs, targets, actions = self._check_batch(inputs, targets, actions)
        q = self.forward(inputs)[np.arange(len(actions)), actions]
        return float(np.mean((q - targets) ** 2))

    def gradients(self, inputs, targets, actions) -> tuple[float, list[np.ndarray]]:
        """Loss and its gradient w.r.t. :meth:`parameters`, by backpropagation.

        Only the output coordinate selected by each sample's action receives
        error; all other outputs contribute nothing.
        """
        inputs, targets, actions = self._check_batch(inputs, targets, actions)
        n = len(actions)
        rows = np.arange(n)
        pre, post = [], [inputs]
        x = inputs
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = x @ w + b
            pre.append(z)
            x = _activate(self.activation, z) if i != last else z
            post.append(x)
        err = x[rows, actions] - targets
        loss = float(np.mean(err ** 2))
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss is {loss}")

        delta = np.zeros_like(x)
        delta[rows, actions] = 2.0 * err / n
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for i in range(last, -1, -1):
            grads[2 * i] = post[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * _activate_grad(self.activation, pre[i - 1], post[i])
        return loss, grads

    def train_batch(self, inputs, targets, actions, cfg: TrainingConfig) -> float:
        """One SGD step on the squared error at each sample's action; returns the pre-step loss."""
        loss, grads = self.gradients(inputs, targets, actions)
        lr = cfg.learning_rate
        for p, g in zip(self.parameters(), grads):
            p -= lr * g
        for p in self.parameters():
            if not np.isfinite(p).all():
                raise NonFiniteLoss("parameters became non-finite after SGD step")
        return loss

    def clone(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                          self.activation)

    def copy_from(self, other: "MlpNetwork") -> None:
        """Overwrite parameters in place with those of ``other`` (same shapes)."""
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def same_parameters(self, other: "MlpNetwork") -> bool:
        return (self.layer_sizes == other.layer_sizes and self.activation == other.activation
                and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())))


def clone_into_target(net: MlpNetwork) -> MlpNetwork:
    return net.clone()


# Checkpoint layout, all little-endian:
#   magic "QGN1" | version u32 | n_sizes u32 | sizes u32[n_sizes] | activation u32
#   | for each layer: W float64[fan_in*fan_out] row-major, b float64[fan_out]
def save_checkpoint(net: MlpNetwork, path) -> None:
    sizes = net.layer_sizes
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<II", CHECKPOINT_VERSION, len(sizes)),
             struct.pack(f"<{len(sizes)}I", *sizes),
             struct.pack("<I", ACTIVATIONS.index(net.activation))]
    for p in net.parameters():
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, expected_version: int = CHECKPOINT_VERSION) -> MlpNetwork:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint ({len(data)} bytes, "
                              f"needed at least {pos + n})")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    magic = bytes(take(4))
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, n_sizes = struct.unpack("<II", take(8))
    if version != expected_version:
        raise FormatError(f"{path}: checkpoint version mismatch: expected {expected_version}, "
                          f"found {version}")
    if n_sizes < 2:
        raise FormatError(f"{path}: need at least two layer sizes, found {n_sizes}")
    sizes = struct.unpack(f"<{n_sizes}I", take(4 * n_sizes))
    (act_code,) = struct.unpack("<I", take(4))
    if act_code >= len(ACTIVATIONS):
        raise FormatError(f"{path}: unknown activation code {act_code}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(take(8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
        b = np.frombuffer(take(8 * fan_out), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after parameters")
    return MlpNetwork(weights, biases, ACTIVATIONS[act_code])
