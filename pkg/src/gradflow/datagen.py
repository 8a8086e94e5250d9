"""Synthetic teacher-student data: standard Gaussian inputs labeled by a
fixed teacher network, with every random draw tied to a recorded seed."""

from __future__ import annotations

import numpy as np

from .network import Activation, Dataset, LayerSpec, Net, init_params, predict

__all__ = [
    "two_layer_net",
    "gaussian_inputs",
    "teacher_student_dataset",
]


def two_layer_net(
    input_dim: int,
    hidden: int,
    activation: Activation = Activation.ERF_SCALED,
    out_dim: int = 1,
    bias: bool = True,
) -> Net:
    """Convenience constructor: hidden layer + linear readout."""
    return Net(
        input_dim,
        (
            LayerSpec(hidden, activation, bias),
            LayerSpec(out_dim, Activation.IDENTITY, bias),
        ),
    )


def gaussian_inputs(n_samples: int, input_dim: int, seed: int) -> np.ndarray:
    """n_samples i.i.d. standard normal input rows from a seeded stream."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_samples, input_dim))


def teacher_student_dataset(
    teacher: Net,
    theta_teacher: np.ndarray,
    n_samples: int,
    seed: int,
    X: np.ndarray | None = None,
) -> Dataset:
    """Noise-free dataset labeled by the teacher.  Pass X to reuse inputs
    (e.g. nested subsamples); otherwise inputs are drawn from the seed."""
    if X is None:
        X = gaussian_inputs(n_samples, teacher.input_dim, seed)
    else:
        X = np.asarray(X, dtype=np.float64)[:n_samples]
    return Dataset(X, predict(teacher, theta_teacher, X))
