"""Dense feed-forward networks with hand-written backprop, MSE loss and Adam.

Both the scoring network and the task network are instances of
:class:`DenseNet`. Weights are stored as ``(fan_in, fan_out)`` matrices so a
layer computes ``inputs @ W + b``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .exceptions import ChecksumError, FormatError, TrainingAbort

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("identity", "two_sigmoid")

CHECKPOINT_MAGIC = b"JFNN"
CHECKPOINT_VERSION = 1


@dataclass
class DenseNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"
    hidden_activation: str = "relu"
    # bumped on every parameter update so stale forward caches are detectable
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input width {w.shape[0]} does not chain")

    @classmethod
    def initialize(cls, layer_dims, output_activation="identity", rng=None, dtype=np.float32):
        """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"invalid layer dims {layer_dims}")
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
            biases.append(rng.uniform(-bound, bound, fan_out).astype(dtype))
        return cls(weights, biases, output_activation=output_activation)

    @classmethod
    def zeros(cls, layer_dims, output_activation="identity", dtype=np.float32):
        dims = list(layer_dims)
        weights = [np.zeros((a, b), dtype=dtype) for a, b in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(b, dtype=dtype) for b in dims[1:]]
        return cls(weights, biases, output_activation=output_activation)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``; arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> DenseNet:
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            output_activation=self.output_activation,
            hidden_activation=self.hidden_activation,
        )

    def load_state(self, other: DenseNet):
        """Copy parameters of ``other`` into this net in place."""
        if other.layer_dims != self.layer_dims:
            raise ValueError("cannot load parameters from a net of different shape")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src
        self.version += 1

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def __call__(self, inputs):
        return forward(self, inputs)[0]


class ForwardCache(NamedTuple):
    net_id: int
    version: int
    layer_inputs: list
    pre_activations: list
    outputs: np.ndarray


class Gradients(NamedTuple):
    weights: list
    biases: list
    inputs: np.ndarray

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.flat())


def _two_sigmoid(z):
    # saturated logits would round to exactly 0 or 2; keep the range open
    dtype = z.dtype
    lo = np.finfo(dtype).tiny
    hi = np.nextafter(dtype.type(2), dtype.type(0))
    return np.clip(2 * expit(z), lo, hi).astype(dtype, copy=False)


def forward(net: DenseNet, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise ValueError(f"expected inputs with {net.n_inputs} columns, got shape {x.shape}")
    layer_inputs, pre = [], []
    n_layers = len(net.weights)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        layer_inputs.append(x)
        z = x @ w + b
        pre.append(z)
        if k < n_layers - 1:
            x = np.maximum(z, 0)
        elif net.output_activation == "two_sigmoid":
            x = _two_sigmoid(z)
        else:
            x = z
    return x, ForwardCache(id(net), net.version, layer_inputs, pre, x)


def backward(net: DenseNet, cache: ForwardCache, output_grad) -> Gradients:
    """Reverse pass; returns parameter gradients and the gradient w.r.t. inputs."""
    if cache.net_id != id(net) or cache.version != net.version:
        raise ValueError("forward cache does not belong to the current state of this net")
    g = np.asarray(output_grad, dtype=net.dtype)
    if g.shape != cache.outputs.shape:
        raise ValueError(f"output grad shape {g.shape} != outputs {cache.outputs.shape}")
    if net.output_activation == "two_sigmoid":
        y = cache.outputs
        g = g * y * (1 - y / 2)
    n_layers = len(net.weights)
    dws, dbs = [None] * n_layers, [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        dws[k] = cache.layer_inputs[k].T @ g
        dbs[k] = g.sum(axis=0)
        g = g @ net.weights[k].T
        if k > 0:
            g = g * (cache.pre_activations[k - 1] > 0)
    return Gradients(dws, dbs, g)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean over all entries of the squared error, and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff**2))
    grad = (2.0 / diff.size * diff).astype(pred.dtype if pred.dtype.kind == "f" else np.float64)
    return loss, grad


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, learning_rate=1e-4, **kwargs) -> AdamState:
        params = net.parameters()
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            **kwargs,
        )


def adam_step(net: DenseNet, grads: Gradients, state: AdamState):
    """Apply one bias-corrected Adam update to ``net`` in place."""
    params = net.parameters()
    flat = grads.flat()
    if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
        raise ValueError("gradient shapes do not match network parameters")
    if not grads.is_finite():
        raise TrainingAbort("non-finite gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for p, g, m, v in zip(params, flat, state.first_moment, state.second_moment):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype)
    net.version += 1
    return net, state


# -- checkpoint I/O -----------------------------------------------------------


def checkpoint_bytes(net: DenseNet) -> bytes:
    """Serialize as ``JFNN`` | version | n_layers | activations | layers... | crc32."""
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(
            "<IIII",
            CHECKPOINT_VERSION,
            len(net.weights),
            HIDDEN_ACTIVATIONS.index(net.hidden_activation),
            OUTPUT_ACTIVATIONS.index(net.output_activation),
        ),
    ]
    for w, b in zip(net.weights, net.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def net_from_bytes(blob: bytes) -> DenseNet:
    if len(blob) < 24:
        raise FormatError("checkpoint truncated", offset=len(blob))
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != stored_crc:
        raise ChecksumError("checkpoint checksum mismatch", offset=len(body))
    version, n_layers, hidden_code, out_code = struct.unpack_from("<IIII", body, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    try:
        hidden = HIDDEN_ACTIVATIONS[hidden_code]
        output = OUTPUT_ACTIVATIONS[out_code]
    except IndexError:
        raise FormatError("unknown activation code", offset=12) from None
    offset = 20
    weights, biases = [], []
    for _ in range(n_layers):
        if offset + 8 > len(body):
            raise FormatError("layer header truncated", offset=offset)
        fan_in, fan_out = struct.unpack_from("<II", body, offset)
        offset += 8
        need = 4 * (fan_in * fan_out + fan_out)
        if offset + need > len(body):
            raise FormatError("layer payload truncated", offset=offset)
        w = np.frombuffer(body, "<f4", fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += 4 * fan_in * fan_out
        b = np.frombuffer(body, "<f4", fan_out, offset)
        offset += 4 * fan_out
        weights.append(w.astype(np.float32))
        biases.append(b.astype(np.float32))
    if offset != len(body):
        raise FormatError("trailing bytes after last layer", offset=offset)
    return DenseNet(weights, biases, output_activation=output, hidden_activation=hidden)


def save_checkpoint(net: DenseNet, path):
    Path(path).write_bytes(checkpoint_bytes(net))


def load_checkpoint(path) -> DenseNet:
    return net_from_bytes(Path(path).read_bytes())
