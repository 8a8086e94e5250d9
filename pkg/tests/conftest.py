"""Shared helpers: independent straight-line oracles and random problem factories.

The oracles here deliberately avoid the library's vectorized code paths
(per-neuron Python loops, plain accumulation) so agreement is meaningful.
"""

import numpy as np
import pytest

from gradflow import (
    Activation,
    Dataset,
    LayerSpec,
    LossConfig,
    Net,
    activation_eval,
    unpack,
)

ALL_ACTIVATIONS = (
    Activation.IDENTITY,
    Activation.TANH,
    Activation.SIGMOID,
    Activation.SOFTPLUS,
    Activation.RELU,
    Activation.ERF_SCALED,
)

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def naive_forward(net: Net, theta: np.ndarray, x) -> np.ndarray:
    """Per-neuron loop re-implementation of the layer composition."""
    layers = unpack(net, theta)
    h = [float(v) for v in np.atleast_1d(np.asarray(x, dtype=np.float64))]
    for spec, (W, b) in zip(net.layers, layers):
        out = []
        for o in range(W.shape[0]):
            s = float(b[o]) if b is not None else 0.0
            for i, hi in enumerate(h):
                s += float(W[o, i]) * hi
            out.append(activation_eval(spec.activation, s)[0])
        h = out
    return np.array(h, dtype=np.float64)


def naive_loss(net: Net, theta: np.ndarray, data: Dataset, cfg: LossConfig = LossConfig()) -> float:
    """Sample-by-sample loss accumulation plus the norm-barrier term."""
    total = 0.0
    for i in range(data.n_samples):
        r = naive_forward(net, theta, data.X[i]) - data.Y[i]
        total += float(np.dot(r, r))
    if cfg.reduction == "mean":
        total /= data.n_samples
    half = 0.5 * float(np.dot(theta, theta))
    if np.isfinite(cfg.barrier_c) and half > cfg.barrier_c:
        total += (half - cfg.barrier_c) ** 2
    return total


def random_net(rng: np.random.Generator, max_params: int = 50, activations=ALL_ACTIVATIONS) -> Net:
    """Random small architecture (1-3 layers, mixed activations/bias flags)."""
    while True:
        depth = int(rng.integers(1, 4))
        d_in = int(rng.integers(1, 4))
        layers = tuple(
            LayerSpec(
                int(rng.integers(1, 5)),
                activations[int(rng.integers(len(activations)))],
                bool(rng.integers(2)),
            )
            for _ in range(depth)
        )
        net = Net(d_in, layers)
        if net.param_count <= max_params:
            return net


def random_dataset(rng: np.random.Generator, net: Net, n: int = 8) -> Dataset:
    X = rng.standard_normal((n, net.input_dim))
    Y = rng.standard_normal((n, net.output_dim))
    return Dataset(X, Y)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
