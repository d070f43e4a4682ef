"""Dense ReLU network over a flat float64 parameter vector.

The whole network lives in one 1-D array so optimizers and the meta-learner
can add, copy and average parameters without knowing the layer structure.
Layout: for each layer in order, the ``(n_in, n_out)`` weight matrix in
row-major order followed by its ``n_out`` biases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths from input to output. Hidden layers use ReLU, the output is linear."""

    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("an architecture needs at least an input and an output size")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be >= 1")

    @classmethod
    def for_env(cls, state_dim: int, n_actions: int, hidden=(256, 256)) -> "MlpArchitecture":
        return cls((state_dim, *hidden, n_actions))

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def unflatten(self, params: np.ndarray) -> list:
        """Per-layer ``(W, b)`` views into ``params`` (no copies)."""
        params = np.asarray(params)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        layers = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = params[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = params[offset:offset + n_out]
            offset += n_out
            layers.append((w, b))
        return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in layers]).astype(np.float64)


def init_params(arch: MlpArchitecture, seed) -> np.ndarray:
    """He-uniform weights in +-sqrt(6 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.n_params)
    for w, _ in arch.unflatten(params):
        bound = np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _as_batch(arch: MlpArchitecture, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.n_inputs:
        raise ValueError(f"input must have {arch.n_inputs} features, got shape {x.shape}")
    return x, single


def forward_trace(arch: MlpArchitecture, params: np.ndarray, x) -> list:
    """Layer activations ``[input, hidden..., output]`` for a batch, as needed by :func:`backward`."""
    h, _ = _as_batch(arch, x)
    layers = arch.unflatten(params)
    trace = [h]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
        trace.append(h)
    return trace


def forward(arch: MlpArchitecture, params: np.ndarray, x) -> np.ndarray:
    """Q-values for one input vector or a batch of rows."""
    out = forward_trace(arch, params, x)[-1]
    return out[0] if np.ndim(x) == 1 else out


def backward(arch: MlpArchitecture, params: np.ndarray, inputs, grad_outputs, trace=None) -> np.ndarray:
    """Gradient of ``mean_n <grad_outputs[n], f(inputs[n])>`` with respect to the parameters.

    Pass the ``trace`` from :func:`forward_trace` on the same inputs to skip the forward pass.
    """
    x, single = _as_batch(arch, inputs)
    g = np.asarray(grad_outputs, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (x.shape[0], arch.n_outputs):
        raise ValueError(f"grad_outputs must have shape {(x.shape[0], arch.n_outputs)}, got {g.shape}")
    if trace is None:
        trace = forward_trace(arch, params, x)

    layers = arch.unflatten(params)
    grad = np.zeros(arch.n_params)
    grad_layers = arch.unflatten(grad)
    delta = g / x.shape[0]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grad_layers[i]
        np.matmul(trace[i].T, delta, out=gw)
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (trace[i] > 0)
    return grad


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"params {params.shape} and grad {grad.shape} differ in shape")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    return params - lr * grad


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, **kwargs) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, **kwargs)

    def copy(self) -> "AdamState":
        return AdamState(self.first_moment.copy(), self.second_moment.copy(), self.step_count,
                         self.beta1, self.beta2, self.epsilon)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> tuple:
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are left untouched."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or grad.shape != state.first_moment.shape:
        raise ValueError("params, grad and optimizer moments must share one shape")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = state.first_moment * b1
    m += (1.0 - b1) * grad
    v = state.second_moment * b2
    v += (1.0 - b2) * np.square(grad)
    # m_hat / (sqrt(v_hat) + eps) with the bias corrections folded into scalars
    denom = np.sqrt(v)
    denom *= 1.0 / np.sqrt(1.0 - b2**t)
    denom += state.epsilon
    step = m / denom
    step *= lr / (1.0 - b1**t)
    return params - step, AdamState(m, v, t, b1, b2, state.epsilon)


# Checkpoint layout, all little-endian:
#   4 bytes   magic b"UQNP"
#   uint32    format version (1)
#   uint32    number of layer sizes k
#   k*uint32  layer sizes
#   uint64    number of parameters n
#   n*float64 parameter vector
CHECKPOINT_MAGIC = b"UQNP"
CHECKPOINT_VERSION = 1


def save_params(path, arch: MlpArchitecture, params: np.ndarray) -> None:
    params = np.asarray(params, dtype="<f8")
    if params.shape != (arch.n_params,):
        raise ValueError("parameter vector does not match the architecture")
    sizes = arch.layer_sizes
    header = CHECKPOINT_MAGIC + struct.pack(f"<II{len(sizes)}IQ", CHECKPOINT_VERSION, len(sizes), *sizes, arch.n_params)
    Path(path).write_bytes(header + params.tobytes())


def load_params(path) -> tuple:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    version, k = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sizes = struct.unpack_from(f"<{k}I", data, 12)
    offset = 12 + 4 * k
    (n,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    arch = MlpArchitecture(sizes)
    if n != arch.n_params or len(data) - offset != 8 * n:
        raise ValueError(f"{path}: truncated or inconsistent checkpoint")
    params = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
    return arch, params
