"""Dense MLP core: init, forward, exact backward, Adam, target-network updates.

Parameters of one network live in a single contiguous float64 vector; the
per-layer weight matrices and bias vectors are views into it. That makes
Adam, soft updates, copies and serialization single vectorized operations.

Snapshot file layout (all integers little-endian)::

    offset  size        field
    0       4           magic b"PNET"
    4       2           format version (uint16, currently 1)
    6       1           output activation (0 = linear, 1 = tanh)
    7       1           reserved, 0
    8       4           number of layer sizes K (uint32)
    12      4*K         layer sizes (uint32 each), input size first
    12+4K   8*P         parameters as float64 LE, layer by layer: the weight
                        matrix (out x in, row-major) followed by the bias (out)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("linear", "tanh")
MAGIC = b"PNET"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBI")


class ConfigError(ValueError):
    """Invalid configuration or shape request."""


class NumericError(FloatingPointError):
    """A loss or gradient became non-finite; the run cannot continue."""


def _layer_slices(sizes):
    slices = []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = slice(offset, offset + n_out * n_in)
        offset += n_out * n_in
        b = slice(offset, offset + n_out)
        offset += n_out
        slices.append((w, b))
    return slices, offset


def param_count(sizes) -> int:
    return _layer_slices(tuple(sizes))[1]


@dataclass(eq=False)
class NetworkParams:
    """Weights of one MLP. ReLU on hidden layers, `output_activation` on the last."""

    sizes: tuple
    output_activation: str
    flat: np.ndarray
    layers: list = field(init=False, repr=False)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.output_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")
        slices, total = _layer_slices(self.sizes)
        if self.flat.shape != (total,):
            raise ConfigError(f"flat vector has shape {self.flat.shape}, expected ({total},)")
        self.layers = [
            (self.flat[w].reshape(n_out, n_in), self.flat[b])
            for (w, b), n_in, n_out in zip(slices, self.sizes[:-1], self.sizes[1:])
        ]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def like(self, flat: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.sizes, self.output_activation, flat)

    def same_shape(self, other: "NetworkParams") -> bool:
        return self.sizes == other.sizes


@dataclass(eq=False)
class GradBundle:
    """Gradient w.r.t. every parameter (flat, same layout) and w.r.t. the input."""

    flat: np.ndarray
    input: np.ndarray


@dataclass(eq=False)
class ForwardCache:
    params: NetworkParams
    inputs: list
    pre: list
    output: np.ndarray
    batched: bool


@dataclass(eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps)


def mlp_init(layer_sizes, output_activation: str = "linear", seed: int = 0) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = tuple(layer_sizes)
    if len(sizes) < 2 or any(int(s) != s or s < 1 for s in sizes):
        raise ConfigError(f"need at least two positive integer layer sizes, got {list(sizes)}")
    if output_activation not in ACTIVATIONS:
        raise ConfigError(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    slices, total = _layer_slices(sizes)
    flat = np.zeros(total)
    for (w, _), fan_in in zip(slices, sizes[:-1]):
        bound = 1.0 / np.sqrt(fan_in)
        flat[w] = rng.uniform(-bound, bound, size=w.stop - w.start)
    return NetworkParams(sizes, output_activation, flat)


def mlp_forward(params: NetworkParams, x):
    """Forward pass on one input vector or a (batch, in) matrix.

    Returns ``(output, cache)``; the cache feeds :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise ConfigError(f"input shape {x.shape} does not match in-dim {params.in_dim}")
    inputs, pre = [], []
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
        elif params.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    out = h if batched else h[0]
    return out, ForwardCache(params, inputs, pre, h, batched)


def mlp_backward(params: NetworkParams, cache: ForwardCache, output_grad) -> GradBundle:
    """Exact gradient of <output_grad, output> w.r.t. parameters and input."""
    if cache.params is not params:
        raise ConfigError("forward cache was produced by a different parameter set")
    g = np.asarray(output_grad, dtype=np.float64)
    g = g if cache.batched else g[None, :]
    if g.shape != cache.output.shape:
        raise ConfigError(f"output_grad shape {g.shape} does not match output {cache.output.shape}")
    if params.output_activation == "tanh":
        g = g * (1.0 - cache.output * cache.output)
    grad = np.empty_like(params.flat)
    slices, _ = _layer_slices(params.sizes)
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        if k < len(params.layers) - 1:
            g = g * (cache.pre[k] > 0.0)
        ws, bs = slices[k]
        grad[ws] = (g.T @ cache.inputs[k]).ravel()
        grad[bs] = g.sum(axis=0)
        g = g @ w
    return GradBundle(grad, g if cache.batched else g[0])


def adam_init(params: NetworkParams, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(np.zeros_like(params.flat), np.zeros_like(params.flat), 0, beta1, beta2, eps)


def adam_step(params: NetworkParams, grads, state: AdamState, lr: float):
    """One bias-corrected Adam step. Returns new ``(params, state)``; inputs are untouched."""
    g = grads.flat if isinstance(grads, GradBundle) else np.asarray(grads)
    if g.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ConfigError("gradient / optimizer state shape does not match parameters")
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient ({np.count_nonzero(~np.isfinite(g))} entries)")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    flat = params.flat - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.like(flat), AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def soft_update(target: NetworkParams, source: NetworkParams, tau: float) -> NetworkParams:
    if not target.same_shape(source):
        raise ConfigError(f"shape mismatch {target.sizes} vs {source.sizes}")
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    if tau == 1.0:
        return hard_copy(source)
    return target.like((1.0 - tau) * target.flat + tau * source.flat)


def hard_copy(source: NetworkParams) -> NetworkParams:
    return source.like(source.flat.copy())


def params_to_bytes(params: NetworkParams) -> bytes:
    act = ACTIVATIONS.index(params.output_activation)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, act, 0, len(params.sizes))
    sizes = struct.pack(f"<{len(params.sizes)}I", *params.sizes)
    return header + sizes + params.flat.astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> NetworkParams:
    if len(data) < _HEADER.size:
        raise ConfigError("snapshot truncated")
    magic, version, act, _, k = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ConfigError(f"bad snapshot magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported snapshot version {version}")
    offset = _HEADER.size
    sizes = struct.unpack_from(f"<{k}I", data, offset)
    offset += 4 * k
    n = param_count(sizes)
    if len(data) != offset + 8 * n:
        raise ConfigError(f"snapshot payload is {len(data) - offset} bytes, expected {8 * n}")
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return NetworkParams(sizes, ACTIVATIONS[act], flat)


def save_params(params: NetworkParams, path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> NetworkParams:
    return params_from_bytes(Path(path).read_bytes())
