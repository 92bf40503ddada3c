"""Minimal dense network engine: forward, analytic backward, SGD/Adam.

All arithmetic is float64 so finite-difference checks stay tight. Networks
are plain lists of DenseLayer; anything fancier (the anchor-selector
composition) assembles its own gradients from these pieces.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import TrainingError

ACTIVATIONS = ("tanh", "sigmoid", "none")
BCE_EPS = 1e-12


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in) float64
    bias: np.ndarray  # (out,) float64
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}"
            )


@dataclass
class ForwardTape:
    """Cached activations from one forward pass, consumed by backward."""

    net_id: int
    inputs: List[np.ndarray]  # per-layer input, 2-D
    outputs: List[np.ndarray]  # per-layer post-activation output, 2-D
    squeeze: bool  # original input was 1-D


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def xavier_uniform(n_out: int, n_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def init_layers(
    sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator
) -> List[DenseLayer]:
    """Xavier-initialized chain drawn from an existing generator stream."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        layers.append(DenseLayer(xavier_uniform(n_out, n_in, rng), np.zeros(n_out), act))
    return layers


def make_mlp(sizes: Sequence[int], activations: Sequence[str], seed: int) -> List[DenseLayer]:
    """Seeded Xavier-initialized chain; len(activations) == len(sizes) - 1."""
    return init_layers(sizes, activations, np.random.default_rng(seed))


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def forward(net: Sequence[DenseLayer], x: np.ndarray) -> Tuple[np.ndarray, ForwardTape]:
    """Composed affine+activation maps. Accepts one vector or a (B, in) batch."""
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    a = arr[None, :] if squeeze else arr
    if a.ndim != 2 or a.shape[1] != net[0].weights.shape[1]:
        raise ValueError(
            f"input shape {arr.shape} does not match first layer ({net[0].weights.shape[1]})"
        )
    inputs, outputs = [], []
    for layer in net:
        inputs.append(a)
        a = _apply_activation(a @ layer.weights.T + layer.bias, layer.activation)
        outputs.append(a)
    tape = ForwardTape(net_id=id(net), inputs=inputs, outputs=outputs, squeeze=squeeze)
    return (a[0] if squeeze else a), tape


def backward(
    net: Sequence[DenseLayer], tape: ForwardTape, loss_grad: np.ndarray
) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Analytic gradients of a scalar loss w.r.t. every weight and bias.

    ``loss_grad`` is dL/d(output). Returns per-layer (dW, db) in layer order
    plus dL/d(input). Batched gradients are summed over the batch.
    """
    if tape.net_id != id(net) or len(tape.inputs) != len(net):
        raise ValueError("tape does not belong to this network (stale tape)")
    for layer, out in zip(net, tape.outputs):
        if out.shape[1] != layer.weights.shape[0]:
            raise ValueError("tape does not belong to this network (stale tape)")

    g = np.asarray(loss_grad, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ValueError(
            f"loss_grad shape {loss_grad.shape} does not match output "
            f"{tape.outputs[-1].shape}"
        )

    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(net)  # type: ignore
    for i in range(len(net) - 1, -1, -1):
        layer, a_in, a_out = net[i], tape.inputs[i], tape.outputs[i]
        if layer.activation == "tanh":
            gz = g * (1.0 - a_out * a_out)
        elif layer.activation == "sigmoid":
            gz = g * a_out * (1.0 - a_out)
        else:
            gz = g
        grads[i] = (gz.T @ a_in, gz.sum(axis=0))
        g = gz @ layer.weights
    return grads, (g[0] if tape.squeeze else g)


def bce_loss(prediction, label):
    """Binary cross-entropy with clamped predictions; returns (loss, dloss/dpred).

    Works elementwise on arrays as well as scalars.
    """
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(label, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p))
    if np.isscalar(prediction) or np.ndim(prediction) == 0:
        return float(loss), float(grad)
    return loss, grad


class Sgd:
    def __init__(self, params: Sequence[np.ndarray], lr: float):
        self.lr = lr

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(
        self,
        params: Sequence[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(params: Sequence[np.ndarray], config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)


def net_params(net: Sequence[DenseLayer]) -> List[np.ndarray]:
    params: List[np.ndarray] = []
    for layer in net:
        params.append(layer.weights)
        params.append(layer.bias)
    return params


def train(
    net: List[DenseLayer],
    inputs: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> Tuple[List[DenseLayer], List[float]]:
    """Mini-batch optimization of BCE on a single-output sigmoid network.

    Shuffling, initialization and updates are all seeded; two runs with the
    same config produce bitwise-identical parameters. Returns the net
    (mutated in place) and the per-epoch mean training loss.
    """
    X = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"inconsistent training shapes {X.shape} / {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")

    rng = np.random.default_rng(config.seed)
    params = net_params(net)
    opt = make_optimizer(params, config)
    n = X.shape[0]
    curve: List[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], y[idx]
            out, tape = forward(net, xb)
            p = out[:, 0]
            losses, dldp = bce_loss(p, yb)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            total += float(losses.sum())
            grad_out = (dldp / len(idx))[:, None]
            grads, _ = backward(net, tape, grad_out)
            flat = [g for pair in grads for g in pair]
            opt.step(params, flat)
        curve.append(total / n)
    return net, curve


# ---------------------------------------------------------------------------
# Checkpoint primitives (composed by the attack checkpoint format)
# ---------------------------------------------------------------------------

_LAYER_HEADER = struct.Struct("<IIB")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}
_ACT_NAME = {i: name for name, i in _ACT_CODE.items()}


def write_layers(fh: BinaryIO, net: Sequence[DenseLayer]) -> None:
    fh.write(struct.pack("<I", len(net)))
    for layer in net:
        n_out, n_in = layer.weights.shape
        fh.write(_LAYER_HEADER.pack(n_out, n_in, _ACT_CODE[layer.activation]))
        fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def read_layers(fh: BinaryIO) -> List[DenseLayer]:
    (count,) = struct.unpack("<I", fh.read(4))
    layers = []
    for _ in range(count):
        n_out, n_in, act = _LAYER_HEADER.unpack(fh.read(_LAYER_HEADER.size))
        w = np.frombuffer(fh.read(8 * n_out * n_in), dtype="<f8").reshape(n_out, n_in)
        b = np.frombuffer(fh.read(8 * n_out), dtype="<f8")
        layers.append(DenseLayer(w.copy(), b.copy(), _ACT_NAME[act]))
    return layers
