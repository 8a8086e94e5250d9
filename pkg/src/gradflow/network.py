"""Network architectures, parameter packing, activations, forward pass, and the
norm barrier.

Parameters of a network live in a single flat float64 vector ("theta") with a
canonical layout: for each layer in order, the weight matrix in row-major order
followed by the bias vector (if the layer has one).  All code in this package
operates on that flat vector; :func:`unpack` exposes per-layer views of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Activation",
    "LayerSpec",
    "Net",
    "Dataset",
    "LossConfig",
    "DimensionMismatchError",
    "activation_eval",
    "activation_triple",
    "forward",
    "forward_batch",
    "predict",
    "barrier",
    "init_params",
    "pack",
    "unpack",
]

_SQRT2 = np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


class DimensionMismatchError(ValueError):
    """Input shapes are inconsistent with the network or dataset."""


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    RELU = "relu"
    ERF_SCALED = "erf_scaled"  # g(x) = erf(x / sqrt(2))


def activation_triple(kind: Activation, x: np.ndarray):
    """Elementwise (value, first derivative, second derivative) of an activation.

    relu uses the almost-everywhere convention (0, 0, 0) at x = 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == Activation.IDENTITY:
        return x, np.ones_like(x), np.zeros_like(x)
    if kind == Activation.TANH:
        t = np.tanh(x)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    if kind == Activation.SIGMOID:
        s = expit(x)
        d1 = s * (1.0 - s)
        return s, d1, d1 * (1.0 - 2.0 * s)
    if kind == Activation.SOFTPLUS:
        v = np.logaddexp(0.0, x)
        s = expit(x)
        return v, s, s * (1.0 - s)
    if kind == Activation.RELU:
        pos = x > 0.0
        d1 = pos.astype(np.float64)
        return np.where(pos, x, 0.0), d1, np.zeros_like(x)
    if kind == Activation.ERF_SCALED:
        v = erf(x / _SQRT2)
        d1 = _SQRT_2_OVER_PI * np.exp(-0.5 * x * x)
        return v, d1, -x * d1
    raise ValueError(f"unknown activation: {kind!r}")


def activation_eval(kind: Activation, x: float) -> tuple[float, float, float]:
    """Scalar convenience wrapper around :func:`activation_triple`."""
    v, d1, d2 = activation_triple(kind, np.float64(x))
    return float(v), float(d1), float(d2)


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: Activation = Activation.IDENTITY
    has_bias: bool = True

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"layer width must be >= 1, got {self.width}")
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass(frozen=True)
class Net:
    """Architecture description: input width plus an ordered list of layers."""

    input_dim: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        layers = tuple(
            l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in self.layers
        )
        if len(layers) < 1:
            raise ValueError("need at least one layer")
        object.__setattr__(self, "layers", layers)

    @property
    def widths(self) -> tuple[int, ...]:
        """(D_0, D_1, ..., D_L) including the input width."""
        return (self.input_dim,) + tuple(l.width for l in self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    @property
    def param_count(self) -> int:
        w = self.widths
        return sum(
            l.width * (w[i] + (1 if l.has_bias else 0))
            for i, l in enumerate(self.layers)
        )

    def describe(self) -> dict:
        """JSON-ready shape record used by sidecar files and run manifests."""
        return {
            "input_dim": self.input_dim,
            "layers": [
                [l.width, l.activation.value, l.has_bias] for l in self.layers
            ],
            "param_count": self.param_count,
        }

    @staticmethod
    def from_description(desc: dict) -> "Net":
        layers = tuple(
            LayerSpec(int(w), Activation(a), bool(b)) for w, a, b in desc["layers"]
        )
        return Net(int(desc["input_dim"]), layers)


def _check_theta(net: Net, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != net.param_count:
        raise DimensionMismatchError(
            f"theta has length {theta.shape}, net expects {net.param_count}"
        )
    return theta


def unpack(net: Net, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Views of theta as per-layer (W, b) pairs; b is None for bias-free layers."""
    theta = _check_theta(net, theta)
    out = []
    pos = 0
    d_prev = net.input_dim
    for layer in net.layers:
        n_w = layer.width * d_prev
        W = theta[pos : pos + n_w].reshape(layer.width, d_prev)
        pos += n_w
        b = None
        if layer.has_bias:
            b = theta[pos : pos + layer.width]
            pos += layer.width
        out.append((W, b))
        d_prev = layer.width
    return out


def pack(net: Net, layers: list[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
    """Inverse of :func:`unpack`; bit-exact round trip."""
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        if b is not None:
            parts.append(np.asarray(b, dtype=np.float64).ravel())
    theta = np.concatenate(parts)
    if theta.shape[0] != net.param_count:
        raise DimensionMismatchError(
            f"packed length {theta.shape[0]} != param_count {net.param_count}"
        )
    return theta


def init_params(net: Net, seed: int, scale: float = 1.0) -> np.ndarray:
    """I.i.d. Normal(0, scale^2) parameters from a seeded PCG64 stream."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal(net.param_count)


def _forward_layers(net: Net, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = x
    for layer, (W, b) in zip(net.layers, unpack(net, theta)):
        # einsum keeps each output row bit-identical whatever the batch size,
        # so batched prediction matches a row-by-row loop exactly
        z = np.einsum("nd,od->no", a, W)
        if b is not None:
            z = z + b
        a, _, _ = activation_triple(layer.activation, z)
    return a


def forward(net: Net, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise DimensionMismatchError(
            f"input has shape {x.shape}, expected ({net.input_dim},)"
        )
    return _forward_layers(net, theta, x[None, :])[0]


@dataclass(frozen=True)
class Dataset:
    """Paired inputs X (N x D_in) and targets Y (N x D_out)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatchError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}"
            )
        if X.shape[0] < 1:
            raise DimensionMismatchError("dataset must contain at least one sample")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def predict(net: Net, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Network outputs for a matrix of inputs, one row per sample."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"inputs have dim {X.shape[1]}, net expects {net.input_dim}"
        )
    return _forward_layers(net, theta, X)


def forward_batch(net: Net, theta: np.ndarray, data: Dataset) -> np.ndarray:
    """Row i of the result is forward(net, theta, X[i])."""
    return predict(net, theta, data.X)


@dataclass(frozen=True)
class LossConfig:
    """Loss options: barrier constant c (inf disables), flow rate eta, reduction."""

    barrier_c: float = np.inf
    eta: float = 1.0
    reduction: str = "mean"

    def __post_init__(self):
        if not (self.barrier_c > 0):
            raise ValueError("barrier_c must be positive (or infinite)")
        if not (self.eta > 0):
            raise ValueError("eta must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction}")


def barrier(theta: np.ndarray, c: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Quartic norm penalty (value, gradient, Hessian).

    Zero with zero derivatives while 0.5*||theta||^2 <= c; outside,
    R = (0.5*||theta||^2 - c)^2 with its exact gradient and Hessian.
    """
    theta = np.asarray(theta, dtype=np.float64)
    P = theta.shape[0]
    excess = 0.5 * float(theta @ theta) - c
    if not np.isfinite(c) or excess <= 0.0:
        return 0.0, np.zeros(P), np.zeros((P, P))
    value = excess * excess
    grad = 2.0 * excess * theta
    hess = 2.0 * np.outer(theta, theta) + (2.0 * excess) * np.eye(P)
    return value, grad, hess
