"""Exact loss, gradient, and Hessian of the squared-error objective, plus
finite-difference oracles, the Hessian spectrum, and a generic objective
adapter used by the integrators and optimizers.

The Hessian is exact (data term plus barrier), computed by second-order
backpropagation: directional derivatives of the gradient are propagated
through the network for blocks of coordinate directions at a time, so memory
stays bounded by a configurable working-set budget while every contraction
maps onto BLAS-friendly matmul/tensordot calls.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .network import (
    Dataset,
    DimensionMismatchError,
    LossConfig,
    Net,
    activation_triple,
    barrier,
    forward_batch,
    unpack,
)

__all__ = [
    "EvalWork",
    "Objective",
    "EigenSolverError",
    "loss",
    "gradient",
    "hessian",
    "hessian_spectrum",
    "fd_gradient",
    "fd_hessian",
    "as_objective",
]


@dataclass
class EvalWork:
    """Evaluation counters; each public derivative call bumps exactly one."""

    n_loss: int = 0
    n_grad: int = 0
    n_hess: int = 0
    cpu_seconds: float = 0.0


class EigenSolverError(RuntimeError):
    """Dense symmetric eigen-solve failed; carries a condition estimate."""

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


def _barrier_value_grad(theta: np.ndarray, c: float):
    """Barrier value and gradient without materializing the P x P Hessian."""
    excess = 0.5 * float(theta @ theta) - c
    if not np.isfinite(c) or excess <= 0.0:
        return 0.0, None
    return excess * excess, 2.0 * excess * theta


def _forward_cache(net: Net, theta: np.ndarray, data: Dataset):
    """Per-layer activations and activation derivatives for one batch."""
    if data.X.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"dataset input dim {data.X.shape[1]} != net input dim {net.input_dim}"
        )
    if data.Y.shape[1] != net.output_dim:
        raise DimensionMismatchError(
            f"dataset target dim {data.Y.shape[1]} != net output dim {net.output_dim}"
        )
    Ws, bs = [], []
    for W, b in unpack(net, theta):
        Ws.append(W)
        bs.append(b)
    a = [data.X]
    sp, spp = [], []
    for layer, W, b in zip(net.layers, Ws, bs):
        z = a[-1] @ W.T
        if b is not None:
            z = z + b
        v, d1, d2 = activation_triple(layer.activation, z)
        a.append(v)
        sp.append(d1)
        spp.append(d2)
    return Ws, bs, a, sp, spp


def _backward_g(net: Net, Ws, a, sp, residual):
    """dLoss/dz per layer for the sum-reduction data term, plus the
    pre-activation backprop vectors u_i = g_{i+1} W_{i+1}."""
    L = len(net.layers)
    g = [None] * L
    us = [None] * L
    g[L - 1] = 2.0 * residual * sp[L - 1]
    for i in range(L - 2, -1, -1):
        us[i] = g[i + 1] @ Ws[i + 1]
        g[i] = us[i] * sp[i]
    return g, us


def _param_slices(net: Net):
    """Canonical packing offsets: per layer, the W block then the b block."""
    slices = []
    pos = 0
    d_prev = net.input_dim
    for layer in net.layers:
        n_w = layer.width * d_prev
        w_sl = slice(pos, pos + n_w)
        pos += n_w
        b_sl = None
        if layer.has_bias:
            b_sl = slice(pos, pos + layer.width)
            pos += layer.width
        slices.append((w_sl, b_sl))
        d_prev = layer.width
    return slices


def loss(
    net: Net,
    theta: np.ndarray,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    work: EvalWork | None = None,
) -> float:
    """Squared-error loss (per cfg.reduction) plus the un-normalized barrier."""
    t0 = time.perf_counter()
    pred = forward_batch(net, theta, data)
    r = pred - data.Y
    value = float(np.sum(r * r))
    if cfg.reduction == "mean":
        value /= data.n_samples
    b_val, _ = _barrier_value_grad(np.asarray(theta, dtype=np.float64), cfg.barrier_c)
    value += b_val
    if work is not None:
        work.n_loss += 1
        work.cpu_seconds += time.perf_counter() - t0
    return value


def gradient(
    net: Net,
    theta: np.ndarray,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    work: EvalWork | None = None,
) -> np.ndarray:
    """Exact gradient of :func:`loss` by reverse-mode accumulation."""
    t0 = time.perf_counter()
    theta = np.asarray(theta, dtype=np.float64)
    Ws, bs, a, sp, _ = _forward_cache(net, theta, data)
    r = a[-1] - data.Y
    g, _ = _backward_g(net, Ws, a, sp, r)
    parts = []
    for i, layer in enumerate(net.layers):
        dW = np.tensordot(g[i], a[i], axes=([0], [0]))
        parts.append(dW.ravel())
        if layer.has_bias:
            parts.append(g[i].sum(axis=0))
    grad = np.concatenate(parts)
    if cfg.reduction == "mean":
        grad /= data.n_samples
    _, b_grad = _barrier_value_grad(theta, cfg.barrier_c)
    if b_grad is not None:
        grad += b_grad
    if work is not None:
        work.n_grad += 1
        work.cpu_seconds += time.perf_counter() - t0
    return grad


def hessian(
    net: Net,
    theta: np.ndarray,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    work: EvalWork | None = None,
    max_chunk_floats: int = 1 << 24,
) -> np.ndarray:
    """Exact Hessian of :func:`loss`, symmetric P x P.

    Directional second derivatives are propagated for blocks of parameter
    coordinates; `max_chunk_floats` bounds the working set (float64 count) of
    one block.
    """
    t0 = time.perf_counter()
    theta = np.asarray(theta, dtype=np.float64)
    P = net.param_count
    N = data.n_samples
    L = len(net.layers)
    Ws, bs, a, sp, spp = _forward_cache(net, theta, data)
    r = a[-1] - data.Y
    g, us = _backward_g(net, Ws, a, sp, r)
    slices = _param_slices(net)

    sum_width = sum(l.width for l in net.layers)
    chunk = max(1, int(max_chunk_floats // max(1, 3 * N * sum_width)))
    H = np.zeros((P, P))

    def run_block(m: int, cols: slice, o_idx: np.ndarray, d_idx: np.ndarray | None):
        """Columns of H for directions in layer m's W (d_idx set) or b block."""
        k = len(o_idx)
        ar = np.arange(k)
        # Forward sweep: directional perturbations of pre-activations (Rz)
        # and activations (Ra); identically zero before the source layer.
        Rz = [None] * L
        Ra = [None] * (L + 1)
        for i in range(m, L):
            if i == m:
                cur = np.zeros((N, k, net.layers[i].width))
                if d_idx is not None:
                    cur[:, ar, o_idx] = a[m][:, d_idx]
                else:
                    cur[:, ar, o_idx] = 1.0
            else:
                d_in = Ra[i].shape[2]
                cur = (Ra[i].reshape(N * k, d_in) @ Ws[i].T).reshape(
                    N, k, net.layers[i].width
                )
            Rz[i] = cur
            Ra[i + 1] = sp[i][:, None, :] * cur
        # Backward sweep: directional perturbations of the g vectors.
        Rg = [None] * L
        Rg[L - 1] = 2.0 * (
            Ra[L] * sp[L - 1][:, None, :]
            + (r * spp[L - 1])[:, None, :] * Rz[L - 1]
        )
        for i in range(L - 2, -1, -1):
            d_out = Rg[i + 1].shape[2]
            Ru = (Rg[i + 1].reshape(N * k, d_out) @ Ws[i + 1]).reshape(
                N, k, net.layers[i].width
            )
            if i + 1 == m and d_idx is not None:
                Ru[:, ar, d_idx] += g[m][:, o_idx]
            Rg[i] = Ru * sp[i][:, None, :]
            if i >= m:
                Rg[i] += (us[i] * spp[i])[:, None, :] * Rz[i]
        # Extract the Hessian columns for every parameter block.
        for ell in range(L):
            w_sl, b_sl = slices[ell]
            colblk = np.tensordot(Rg[ell], a[ell], axes=([0], [0]))
            if ell >= m + 1:
                colblk += np.tensordot(
                    Ra[ell], g[ell], axes=([0], [0])
                ).swapaxes(1, 2)
            H[w_sl, cols] = colblk.reshape(k, -1).T
            if b_sl is not None:
                H[b_sl, cols] = Rg[ell].sum(axis=0).T

    for m, layer in enumerate(net.layers):
        w_sl, b_sl = slices[m]
        d_in = a[m].shape[1]
        n_w = layer.width * d_in
        for start in range(0, n_w, chunk):
            stop = min(start + chunk, n_w)
            j = np.arange(start, stop)
            run_block(
                m,
                slice(w_sl.start + start, w_sl.start + stop),
                j // d_in,
                j % d_in,
            )
        if b_sl is not None:
            for start in range(0, layer.width, chunk):
                stop = min(start + chunk, layer.width)
                run_block(
                    m,
                    slice(b_sl.start + start, b_sl.start + stop),
                    np.arange(start, stop),
                    None,
                )

    if cfg.reduction == "mean":
        H /= N
    _, _, b_hess = barrier(theta, cfg.barrier_c)
    H += b_hess
    H = 0.5 * (H + H.T)
    if work is not None:
        work.n_hess += 1
        work.cpu_seconds += time.perf_counter() - t0
    return H


def hessian_spectrum(
    net: Net,
    theta: np.ndarray,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    work: EvalWork | None = None,
) -> np.ndarray:
    """Eigenvalues of the symmetrized Hessian, ascending."""
    H = hessian(net, theta, data, cfg, work=work)
    try:
        return np.linalg.eigvalsh(H)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        scale = float(np.abs(H).max())
        cond = np.inf if scale == 0 else scale / max(np.abs(np.diag(H)).min(), 1e-300)
        raise EigenSolverError(f"eigen-decomposition failed: {exc}", cond) from exc


def fd_gradient(
    net: Net,
    theta: np.ndarray,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    step: float = 1e-6,
) -> np.ndarray:
    """Central finite differences of :func:`loss`; verification oracle."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.shape[0]):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += step
        tm[i] -= step
        out[i] = (loss(net, tp, data, cfg) - loss(net, tm, data, cfg)) / (2 * step)
    return out


def fd_hessian(
    net: Net,
    theta: np.ndarray,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    step: float = 1e-5,
) -> np.ndarray:
    """Central finite differences of :func:`gradient`; verification oracle."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    P = theta.shape[0]
    out = np.empty((P, P))
    for i in range(P):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += step
        tm[i] -= step
        out[i] = (gradient(net, tp, data, cfg) - gradient(net, tm, data, cfg)) / (
            2 * step
        )
    return 0.5 * (out + out.T)


@dataclass
class Objective:
    """Callable bundle (value, gradient, Hessian) over a flat parameter vector."""

    dim: int
    f: Callable[[np.ndarray], float]
    g: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    work: EvalWork = field(default_factory=EvalWork)


def as_objective(
    net: Net,
    data: Dataset,
    cfg: LossConfig = LossConfig(),
    work: EvalWork | None = None,
) -> Objective:
    """Bind (net, data, cfg) into an Objective sharing one work ledger."""
    w = work if work is not None else EvalWork()
    return Objective(
        dim=net.param_count,
        f=lambda th: loss(net, th, data, cfg, work=w),
        g=lambda th: gradient(net, th, data, cfg, work=w),
        h=lambda th: hessian(net, th, data, cfg, work=w),
        work=w,
    )
