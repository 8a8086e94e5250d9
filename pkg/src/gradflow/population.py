"""Population (infinite-data) loss for bias-free two-layer student/teacher
networks under standard Gaussian inputs.

The expected squared error expands into pairwise kernels
J(u, v) = E[sigma(u.x) sigma(v.x)], which depend only on p = ||u||^2,
q = ||v||^2, and r = u.v.  Closed forms are implemented for identity,
erf_scaled, and relu and are certified against the Monte-Carlo oracle in the
test suite; other activations must go through :func:`mc_oracle`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .derivatives import EvalWork, Objective
from .network import Activation, activation_triple
from .optimize import Budget, ConvergenceReport, OptimizerMethod, minimize_objective

__all__ = [
    "NetISpec",
    "UnsupportedActivationError",
    "ANALYTIC_ACTIVATIONS",
    "neti_loss",
    "neti_gradient",
    "neti_hessian",
    "neti_pack",
    "neti_unpack",
    "neti_objective",
    "neti_train",
    "mc_oracle",
    "align_student",
    "aligned_sq_distance",
]

ANALYTIC_ACTIVATIONS = (Activation.IDENTITY, Activation.ERF_SCALED, Activation.RELU)

_ODD_ACTIVATIONS = (Activation.IDENTITY, Activation.ERF_SCALED, Activation.TANH)


class UnsupportedActivationError(ValueError):
    """Raised when no closed-form kernel exists for the activation."""

    def __init__(self, activation: Activation):
        super().__init__(
            f"no analytic population kernel for {activation.value!r}; "
            "use mc_oracle for general activations"
        )


@dataclass(frozen=True)
class NetISpec:
    """Bias-free two-layer pair: student (W, a) and fixed teacher (V, a_star).

    Trainable parameters are W flattened row-major, followed by a when
    trainable_output is set (soft-committee mode fixes a).
    """

    input_dim: int
    W: np.ndarray
    a: np.ndarray
    V: np.ndarray
    a_star: np.ndarray
    activation: Activation = Activation.ERF_SCALED
    trainable_output: bool = True

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        V = np.atleast_2d(np.asarray(self.V, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        a_star = np.atleast_1d(np.asarray(self.a_star, dtype=np.float64))
        D = self.input_dim
        if W.shape[1] != D or V.shape[1] != D:
            raise ValueError("weight rows must have length input_dim")
        if a.shape[0] != W.shape[0] or a_star.shape[0] != V.shape[0]:
            raise ValueError("output weight count must match hidden width")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_star", a_star)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_student(self) -> int:
        return self.W.shape[0]

    @property
    def n_teacher(self) -> int:
        return self.V.shape[0]

    @property
    def n_trainable(self) -> int:
        return self.W.size + (self.a.size if self.trainable_output else 0)

    def to_json_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "W": self.W.tolist(),
            "a": self.a.tolist(),
            "V": self.V.tolist(),
            "a_star": self.a_star.tolist(),
            "activation": self.activation.value,
            "trainable_output": self.trainable_output,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "NetISpec":
        return NetISpec(
            input_dim=int(d["input_dim"]),
            W=np.array(d["W"], dtype=np.float64),
            a=np.array(d["a"], dtype=np.float64),
            V=np.array(d["V"], dtype=np.float64),
            a_star=np.array(d["a_star"], dtype=np.float64),
            activation=Activation(d["activation"]),
            trainable_output=bool(d["trainable_output"]),
        )


def _kernel(activation: Activation, p, q, r):
    """J, dJ/dp, dJ/dr for J(u,v) = E[sigma(u.x) sigma(v.x)], elementwise in
    (p, q, r) = (||u||^2, ||v||^2, u.v)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if activation == Activation.IDENTITY:
        return r.copy(), np.zeros_like(r), np.ones_like(r)
    if activation == Activation.ERF_SCALED:
        s = (1.0 + p) * (1.0 + q)
        arg = np.clip(r / np.sqrt(s), -1.0, 1.0)
        J = (2.0 / np.pi) * np.arcsin(arg)
        den = np.sqrt(np.maximum(s - r * r, 1e-300))  # >= 1 + p + q > 0
        J_r = 2.0 / (np.pi * den)
        J_p = -r / (np.pi * (1.0 + p) * den)
        return J, J_p, J_r
    if activation == Activation.RELU:
        pq = p * q
        root_pq = np.sqrt(np.maximum(pq, 1e-300))
        arg = np.clip(r / root_pq, -1.0, 1.0)
        disc = np.sqrt(np.maximum(pq - r * r, 0.0))
        angle = np.pi - np.arccos(arg)
        J = (disc + r * angle) / (2.0 * np.pi)
        J_r = angle / (2.0 * np.pi)
        J_p = disc / (4.0 * np.pi * np.maximum(p, 1e-300))
        return J, J_p, J_r
    raise UnsupportedActivationError(activation)


def _gram_terms(spec: NetISpec):
    U = np.vstack([spec.W, spec.V])
    c = np.concatenate([spec.a, -spec.a_star])
    # einsum evaluates each pairwise dot product identically whatever the row
    # order, so permuting hidden units permutes G's entries bit-for-bit
    G = np.einsum("id,jd->ij", U, U)
    pvec = np.diag(G).copy()
    return U, c, pvec, G


def neti_loss(spec: NetISpec, work: EvalWork | None = None) -> float:
    """Population risk 0.5 * E[(student(x) - teacher(x))^2], in closed form."""
    U, c, pvec, G = _gram_terms(spec)
    J, _, _ = _kernel(spec.activation, pvec[:, None], pvec[None, :], G)
    # fsum is exactly rounded, hence independent of summation order: the risk
    # is bitwise invariant under hidden-unit permutations
    value = 0.5 * math.fsum((np.outer(c, c) * J).ravel())
    if work is not None:
        work.n_loss += 1
    return value


def neti_gradient(spec: NetISpec, work: EvalWork | None = None) -> np.ndarray:
    """Exact gradient of :func:`neti_loss` over the trainable parameters."""
    U, c, pvec, G = _gram_terms(spec)
    K = spec.n_student
    J, J_p, J_r = _kernel(spec.activation, pvec[:, None], pvec[None, :], G)
    Cc = np.outer(c, c)
    M1 = Cc * J_p
    M2 = Cc * J_r
    gU = 2.0 * M1.sum(axis=1)[:, None] * U + M2 @ U
    parts = [gU[:K].ravel()]
    if spec.trainable_output:
        parts.append((J @ c)[:K])
    grad = np.concatenate(parts)
    if work is not None:
        work.n_grad += 1
    return grad


def neti_pack(spec: NetISpec) -> np.ndarray:
    """Trainable parameters as a flat vector (W row-major, then a)."""
    parts = [spec.W.ravel()]
    if spec.trainable_output:
        parts.append(spec.a)
    return np.concatenate(parts)


def neti_unpack(spec: NetISpec, x: np.ndarray) -> NetISpec:
    """A copy of spec with trainable parameters replaced by x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.n_trainable,):
        raise ValueError(f"expected {spec.n_trainable} parameters, got {x.shape}")
    K, D = spec.W.shape
    W = x[: K * D].reshape(K, D).copy()
    a = x[K * D :].copy() if spec.trainable_output else spec.a
    return replace(spec, W=W, a=a)


def neti_hessian(
    spec: NetISpec, step: float = 1e-5, work: EvalWork | None = None
) -> np.ndarray:
    """Hessian of the population risk by central differences of the analytic
    gradient (step 1e-5), symmetrized."""
    x0 = neti_pack(spec)
    n = x0.shape[0]
    H = np.empty((n, n))
    for i in range(n):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += step
        xm[i] -= step
        H[i] = (
            neti_gradient(neti_unpack(spec, xp)) - neti_gradient(neti_unpack(spec, xm))
        ) / (2.0 * step)
    H = 0.5 * (H + H.T)
    if work is not None:
        work.n_hess += 1
    return H


def mc_oracle(
    spec: NetISpec, n_samples: int, seed: int, chunk_size: int = 1 << 16
) -> tuple[float, float]:
    """Monte-Carlo estimate of the population risk and its standard error.

    Works for every activation; deterministic for a fixed seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    s1 = 0.0
    s2 = 0.0
    done = 0
    while done < n_samples:
        k = min(chunk_size, n_samples - done)
        X = rng.standard_normal((k, spec.input_dim))
        zs, _, _ = activation_triple(spec.activation, X @ spec.W.T)
        zt, _, _ = activation_triple(spec.activation, X @ spec.V.T)
        res2 = (zs @ spec.a - zt @ spec.a_star) ** 2
        s1 += float(res2.sum())
        s2 += float((res2 * res2).sum())
        done += k
    mean = s1 / n_samples
    if n_samples > 1:
        var = max(s2 - n_samples * mean * mean, 0.0) / (n_samples - 1)
        se = 0.5 * np.sqrt(var / n_samples)
    else:
        se = 0.0
    return 0.5 * mean, float(se)


def neti_objective(spec: NetISpec, work: EvalWork | None = None) -> Objective:
    """Adapter: population risk as an Objective over the trainable vector."""
    w = work if work is not None else EvalWork()

    def f(x):
        val = neti_loss(neti_unpack(spec, x))
        w.n_loss += 1
        return val

    def g(x):
        val = neti_gradient(neti_unpack(spec, x))
        w.n_grad += 1
        return val

    def h(x):
        val = neti_hessian(neti_unpack(spec, x))
        w.n_hess += 1
        return val

    return Objective(dim=spec.n_trainable, f=f, g=g, h=h, work=w)


def neti_train(
    spec: NetISpec,
    method: OptimizerMethod,
    budget: Budget = Budget(),
    warm_start=None,
    eta: float = 1.0,
) -> tuple[NetISpec, ConvergenceReport]:
    """Optimize the student against the population risk.

    warm_start, if given, is an IntegratorConfig: the descent flow is
    integrated first and the optimizer starts from its endpoint.
    """
    obj = neti_objective(spec)
    x0 = neti_pack(spec)
    if warm_start is not None:
        from .ode import integrate_objective

        traj = integrate_objective(obj, x0, warm_start, eta=eta)
        x0 = traj.final_state
    x_opt, report = minimize_objective(obj, x0, method, budget, eta=eta)
    return neti_unpack(spec, x_opt), report


def align_student(
    W: np.ndarray,
    a: np.ndarray,
    W_ref: np.ndarray,
    a_ref: np.ndarray,
    activation: Activation = Activation.ERF_SCALED,
) -> tuple[np.ndarray, np.ndarray]:
    """Resolve hidden-unit permutation (and sign, for odd activations)
    symmetry by greedily matching first-layer rows to the reference."""
    W = np.asarray(W, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    K = W.shape[0]
    if W_ref.shape != W.shape or a_ref.shape != a.shape:
        raise ValueError("student and reference shapes differ")
    signs = (1.0, -1.0) if Activation(activation) in _ODD_ACTIVATIONS else (1.0,)
    cost = np.full((K, K, len(signs)), np.inf)
    for si, s in enumerate(signs):
        dW = s * W[:, None, :] - W_ref[None, :, :]
        cost[:, :, si] = np.sum(dW * dW, axis=2) + (s * a[:, None] - a_ref[None, :]) ** 2
    W_out = np.empty_like(W)
    a_out = np.empty_like(a)
    used_i = np.zeros(K, dtype=bool)
    used_j = np.zeros(K, dtype=bool)
    masked = cost.copy()
    for _ in range(K):
        i, j, si = np.unravel_index(np.argmin(masked), masked.shape)
        s = signs[si]
        W_out[j] = s * W[i]
        a_out[j] = s * a[i]
        used_i[i] = True
        used_j[j] = True
        masked[i, :, :] = np.inf
        masked[:, j, :] = np.inf
    return W_out, a_out


def aligned_sq_distance(spec_a: NetISpec, spec_b: NetISpec) -> float:
    """Squared l2 distance between trainable parameters after aligning
    spec_a's hidden units (permutation/sign) to spec_b's."""
    if spec_a.W.shape != spec_b.W.shape:
        raise ValueError("specs have different student shapes")
    W_al, a_al = align_student(
        spec_a.W, spec_a.a, spec_b.W, spec_b.a, spec_a.activation
    )
    d = float(np.sum((W_al - spec_b.W) ** 2))
    if spec_a.trainable_output and spec_b.trainable_output:
        d += float(np.sum((a_al - spec_b.a) ** 2))
    return d
