"""Multilayer perceptrons with hand-written reverse-mode gradients.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
shape ``(B, fan_in)`` maps to ``x @ W + b``. Hidden layers apply the chosen
activation; the output layer is linear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError

ACTIVATIONS = ("tanh", "relu", "elu", "leaky_relu", "sigmoid", "swish")
INITIALIZERS = (
    "glorot_normal",
    "glorot_uniform",
    "he_normal",
    "he_uniform",
    "lecun_normal",
    "lecun_uniform",
    "orthogonal",
    "orthogonal_1.41",
)
LEAKY_SLOPE = 0.01


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation_fn(kind: str, x):
    """Return ``(f(x), f'(x))`` elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        y = np.tanh(x)
        return y, 1.0 - y * y
    if kind == "relu":
        return np.maximum(x, 0.0), (x > 0).astype(np.float64)
    if kind == "elu":
        neg = np.expm1(np.minimum(x, 0.0))
        return np.where(x > 0, x, neg), np.where(x > 0, 1.0, neg + 1.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x), np.where(x > 0, 1.0, LEAKY_SLOPE)
    if kind == "sigmoid":
        s = _sigmoid(x)
        return s, s * (1.0 - s)
    if kind == "swish":
        s = _sigmoid(x)
        return x * s, s + x * s * (1.0 - s)
    raise UsageError(f"unknown activation {kind!r}")


def init_weight(kind: str, fan_in: int, fan_out: int, rng) -> np.ndarray:
    if kind == "glorot_normal":
        return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), (fan_in, fan_out))
    if kind == "glorot_uniform":
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, (fan_in, fan_out))
    if kind == "he_normal":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
    if kind == "he_uniform":
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, (fan_in, fan_out))
    if kind == "lecun_normal":
        return rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, fan_out))
    if kind == "lecun_uniform":
        lim = np.sqrt(3.0 / fan_in)
        return rng.uniform(-lim, lim, (fan_in, fan_out))
    if kind in ("orthogonal", "orthogonal_1.41"):
        gain = 1.41 if kind == "orthogonal_1.41" else 1.0
        return gain * _semi_orthogonal(fan_in, fan_out, rng)
    raise UsageError(f"unknown initializer {kind!r}")


def _semi_orthogonal(rows, cols, rng):
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.normal(size=(big, small)))
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q if rows >= cols else q.T


@dataclass
class MlpSpec:
    in_dim: int
    widths: list
    out_dim: int
    activation: str = "tanh"
    init: str = "orthogonal_1.41"
    last_layer_scale: float = 1.0

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if not self.widths or any(w < 1 for w in self.widths):
            raise UsageError("widths must be a non-empty list of positive integers")
        if not self.last_layer_scale > 0:
            raise UsageError("last_layer_scale must be positive")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        if self.init not in INITIALIZERS:
            raise UsageError(f"unknown initializer {self.init!r}")

    @property
    def sizes(self):
        return [self.in_dim, *self.widths, self.out_dim]


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list
    biases: list
    version: int = field(default=0, compare=False)

    def named_arrays(self, prefix=""):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}layer{i}/w"] = w
            out[f"{prefix}layer{i}/b"] = b
        return out

    def bind(self, views: dict, prefix=""):
        """Replace storage with externally owned arrays (e.g. flat-buffer views)."""
        for i in range(len(self.weights)):
            self.weights[i] = views[f"{prefix}layer{i}/w"]
            self.biases[i] = views[f"{prefix}layer{i}/b"]

    def touch(self):
        self.version += 1


def init_mlp(spec: MlpSpec, rng) -> MlpParams:
    sizes = spec.sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(init_weight(spec.init, fan_in, fan_out, rng))
        biases.append(np.zeros(fan_out))
    weights[-1] = weights[-1] * spec.last_layer_scale
    return MlpParams(spec, weights, biases)


@dataclass
class ForwardCache:
    params_id: int
    version: int
    inputs: list
    derivs: list


def forward(params: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.spec.in_dim:
        raise UsageError(f"expected input dim {params.spec.in_dim}, got {h.shape[1]}")
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite network input")
    inputs, derivs = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            h, d = activation_fn(params.spec.activation, z)
            derivs.append(d)
        else:
            h = z
    cache = ForwardCache(id(params), params.version, inputs, derivs)
    return (h[0] if squeeze else h), cache


def backward(params: MlpParams, cache: ForwardCache, dy):
    """Gradients of ``<dy, y>`` w.r.t. every weight, bias and the input."""
    if cache.params_id != id(params) or cache.version != params.version:
        raise UsageError("stale forward cache: parameters changed since forward()")
    g = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    n_layers = len(params.weights)
    dws = [None] * n_layers
    dbs = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            g = g * cache.derivs[i]
        dws[i] = cache.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    dx = g[0] if np.ndim(dy) == 1 else g
    return {"weights": dws, "biases": dbs}, dx


def grads_as_named(grads, prefix=""):
    out = {}
    for i, (dw, db) in enumerate(zip(grads["weights"], grads["biases"])):
        out[f"{prefix}layer{i}/w"] = dw
        out[f"{prefix}layer{i}/b"] = db
    return out
