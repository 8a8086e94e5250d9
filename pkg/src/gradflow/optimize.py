"""Fixed-point search on loss landscapes: gradient descent, Adam, BFGS,
L-BFGS, and Newton trust-region, plus the epoch-based probably-converged
protocol and small eigenvalue diagnostics.

All solvers operate on an :class:`~gradflow.derivatives.Objective`; wrappers
bind a network/dataset pair.  Quasi-Newton and Newton methods optionally see
the objective scaled by the flow rate eta — the documented knob for pushing
line-searched methods below their usual tiny-gradient stall.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .derivatives import Objective, as_objective
from .network import Dataset, LossConfig, Net

__all__ = [
    "GD",
    "Adam",
    "BFGS",
    "LBFGS",
    "NewtonTR",
    "OptimizerMethod",
    "Budget",
    "ConvergenceReport",
    "optimizer_from_name",
    "optimizer_name",
    "minimize",
    "minimize_objective",
    "newton_tr_step",
    "min_eigenvalue",
    "probably_converged_protocol",
    "probably_converged_protocol_objective",
]


@dataclass(frozen=True)
class GD:
    lr: float

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1, beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class BFGS:
    pass


@dataclass(frozen=True)
class LBFGS:
    memory: int = 10
    scale_init: bool = True  # gamma-scaled initial inverse Hessian per iteration

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass(frozen=True)
class NewtonTR:
    delta0: float = 1.0
    delta_max: float = 100.0

    def __post_init__(self):
        if not (self.delta0 > 0 and self.delta_max > 0):
            raise ValueError("trust radii must be positive")


OptimizerMethod = Union[GD, Adam, BFGS, LBFGS, NewtonTR]


def optimizer_name(method: OptimizerMethod) -> str:
    return {
        GD: "gd",
        Adam: "adam",
        BFGS: "bfgs",
        LBFGS: "lbfgs",
        NewtonTR: "newton_tr",
    }[type(method)]


def optimizer_from_name(name: str, **kwargs) -> OptimizerMethod:
    table = {"gd": GD, "adam": Adam, "bfgs": BFGS, "lbfgs": LBFGS, "newton_tr": NewtonTR}
    if name not in table:
        raise ValueError(f"unknown optimizer method: {name!r}")
    return table[name](**kwargs)


@dataclass(frozen=True)
class Budget:
    max_iters: int = 1000
    grad_tol: float = 1e-8
    wall_seconds: float | None = None

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.grad_tol >= 0:
            raise ValueError("grad_tol must be >= 0")


@dataclass
class ConvergenceReport:
    final_loss: float
    grad_norm: float
    iterations: int
    status: str  # probably_converged | not_converged | budget_exhausted
    min_eigenvalue: float | None = None
    n_linesearch_failures: int = 0
    n_skipped_updates: int = 0
    wall_seconds: float = 0.0
    epoch_losses: list | None = None


def min_eigenvalue(H: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix (dense solver)."""
    return float(np.linalg.eigvalsh(np.asarray(H, dtype=np.float64))[0])


def _cauchy_point(H: np.ndarray, g: np.ndarray, delta: float) -> np.ndarray:
    """Minimizer of the quadratic model along -g within the radius."""
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return np.zeros_like(g)
    gHg = float(g @ H @ g)
    t_edge = delta / gnorm
    if gHg <= 0:
        t = t_edge
    else:
        t = min(gnorm * gnorm / gHg, t_edge)
    return -t * g


def _model_decrease(H: np.ndarray, g: np.ndarray, d: np.ndarray) -> float:
    return -(float(g @ d) + 0.5 * float(d @ H @ d))


def newton_tr_step(H: np.ndarray, g: np.ndarray, delta: float) -> np.ndarray:
    """Approximate trust-region subproblem solution: dogleg when H is
    positive definite, otherwise a ridge-shifted Newton step with the shift
    doubled until definiteness and feasibility; the returned step never
    predicts less decrease than the Cauchy point."""
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not delta > 0:
        raise ValueError("delta must be positive")
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return np.zeros_like(g)

    candidate = None
    try:
        cf = cho_factor(H)
        d_newton = -cho_solve(cf, g)
        if np.linalg.norm(d_newton) <= delta:
            candidate = d_newton
        else:
            gHg = float(g @ H @ g)
            p_u = -(gnorm * gnorm / gHg) * g
            pu_norm = float(np.linalg.norm(p_u))
            if pu_norm >= delta:
                candidate = -(delta / gnorm) * g
            else:
                # ||p_u + tau (d_newton - p_u)|| = delta on tau in [0, 1]
                w = d_newton - p_u
                a = float(w @ w)
                b = 2.0 * float(p_u @ w)
                c = pu_norm * pu_norm - delta * delta
                tau = (-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
                candidate = p_u + tau * w
    except np.linalg.LinAlgError:
        candidate = None

    if candidate is None:
        scale = max(float(np.abs(H).max()), 1.0)
        lam = 1e-10 * scale
        for _ in range(200):
            try:
                cf = cho_factor(H + lam * np.eye(H.shape[0]))
            except np.linalg.LinAlgError:
                lam *= 2.0
                continue
            d = -cho_solve(cf, g)
            if np.linalg.norm(d) <= delta:
                candidate = d
                break
            lam *= 2.0
        if candidate is None:
            candidate = -(delta / gnorm) * g

    cauchy = _cauchy_point(H, g, delta)
    if _model_decrease(H, g, candidate) >= _model_decrease(H, g, cauchy):
        return candidate
    return cauchy


def _cubic_minimizer(a, fa, dfa, b, fb, dfb):
    """Minimizer of the cubic matching values/slopes at a and b, or None."""
    if a == b:
        return None
    d1 = dfa + dfb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - dfa * dfb
    if disc < 0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = dfb - dfa + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (dfb + d2 - d1) / denom


def _strong_wolfe(f, g, x, p, f0, g0, max_trials=25, alpha0=1.0, c1=1e-4, c2=0.9):
    """Strong Wolfe line search with cubic interpolation.

    Returns (alpha, f_new, g_new) on success, None on failure.  One trial is
    one (loss, gradient) evaluation pair.
    """
    dphi0 = float(g0 @ p)
    if dphi0 >= 0:
        return None
    trials = 0

    def phi(a):
        nonlocal trials
        trials += 1
        xa = x + a * p
        return f(xa), g(xa)

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
        while trials < max_trials:
            a_j = _cubic_minimizer(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            margin = 0.1 * (hi - lo)
            if a_j is None or not (lo + margin <= a_j <= hi - margin):
                a_j = 0.5 * (lo + hi)
            f_j, g_j = phi(a_j)
            d_j = float(g_j @ p)
            if f_j > f0 + c1 * a_j * dphi0 or f_j >= f_lo:
                a_hi, f_hi, d_hi = a_j, f_j, d_j
            else:
                if abs(d_j) <= -c2 * dphi0:
                    return a_j, f_j, g_j
                if d_j * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a_j, f_j, d_j
            if hi - lo < 1e-18 * max(1.0, abs(hi)):
                return None
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha0
    a_max = 1e10
    first = True
    while trials < max_trials:
        f_a, g_a = phi(a)
        d_a = float(g_a @ p)
        if f_a > f0 + c1 * a * dphi0 or (not first and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f_a, d_a)
        if abs(d_a) <= -c2 * dphi0:
            return a, f_a, g_a
        if d_a >= 0:
            return zoom(a, f_a, d_a, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f_a, d_a
        a = min(2.0 * a, a_max)
        first = False
    return None


class _BestSeen:
    def __init__(self, theta, f_val):
        self.theta = theta.copy()
        self.f = f_val

    def offer(self, theta, f_val):
        if f_val < self.f:
            self.f = f_val
            self.theta = theta.copy()


def minimize_objective(
    obj: Objective,
    theta0: np.ndarray,
    method: OptimizerMethod,
    budget: Budget = Budget(),
    eta: float = 1.0,
    trace: list | None = None,
) -> tuple[np.ndarray, ConvergenceReport]:
    """Minimize an objective; returns (best-seen theta, report).

    eta scales (loss, gradient, Hessian) seen by the line-searched and Newton
    methods (bfgs, lbfgs, newton_tr); gd and adam use their own learning rate
    and ignore eta.  Reported loss and gradient norm are always unscaled.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (obj.dim,):
        raise ValueError(f"theta0 has shape {theta0.shape}, expected ({obj.dim},)")
    scaled = not isinstance(method, (GD, Adam)) and eta != 1.0
    if scaled:
        inner = Objective(
            dim=obj.dim,
            f=lambda th: eta * obj.f(th),
            g=lambda th: eta * obj.g(th),
            h=lambda th: eta * obj.h(th),
            work=obj.work,
        )
    else:
        inner = obj
    unscale = eta if scaled else 1.0

    clock0 = time.perf_counter()
    theta = theta0.copy()
    f_cur = inner.f(theta)
    g_cur = inner.g(theta)
    best = _BestSeen(theta, f_cur)
    iters = 0
    n_ls_fail = 0
    n_skipped = 0
    status = "budget_exhausted"

    def over_wall():
        return (
            budget.wall_seconds is not None
            and time.perf_counter() - clock0 >= budget.wall_seconds
        )

    def true_grad_norm(gv):
        return float(np.linalg.norm(gv)) / unscale

    if isinstance(method, (GD, Adam)):
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        while True:
            if true_grad_norm(g_cur) <= budget.grad_tol:
                status = "probably_converged"
                break
            if iters >= budget.max_iters or over_wall():
                break
            if isinstance(method, GD):
                theta = theta - method.lr * g_cur
            else:
                t = iters + 1
                m = method.beta1 * m + (1 - method.beta1) * g_cur
                v = method.beta2 * v + (1 - method.beta2) * (g_cur * g_cur)
                m_hat = m / (1 - method.beta1**t)
                v_hat = v / (1 - method.beta2**t)
                theta = theta - method.lr * m_hat / (np.sqrt(v_hat) + method.eps)
            f_cur = inner.f(theta)
            g_cur = inner.g(theta)
            best.offer(theta, f_cur)
            iters += 1

    elif isinstance(method, (BFGS, LBFGS)):
        dense = isinstance(method, BFGS)
        if dense:
            Hinv = np.eye(obj.dim)
        else:
            hist: list[tuple[np.ndarray, np.ndarray, float]] = []
        alpha_last = 1.0
        while True:
            if true_grad_norm(g_cur) <= budget.grad_tol:
                status = "probably_converged"
                break
            if iters >= budget.max_iters or over_wall():
                break
            if dense:
                p = -(Hinv @ g_cur)
            else:
                q = g_cur.copy()
                alphas = []
                for s, yv, rho in reversed(hist):
                    a_i = rho * float(s @ q)
                    alphas.append(a_i)
                    q -= a_i * yv
                if method.scale_init and hist:
                    s, yv, _ = hist[-1]
                    q *= float(s @ yv) / float(yv @ yv)
                for (s, yv, rho), a_i in zip(hist, reversed(alphas)):
                    b_i = rho * float(yv @ q)
                    q += (a_i - b_i) * s
                p = -q
            res = _strong_wolfe(inner.f, inner.g, theta, p, f_cur, g_cur)
            if res is None:
                # Fall back to a gradient step at the last accepted length,
                # backtracking until the loss decreases.
                n_ls_fail += 1
                gdir = -g_cur
                a = alpha_last
                ok = False
                for _ in range(30):
                    cand = theta + a * gdir
                    f_c = inner.f(cand)
                    if f_c < f_cur:
                        theta_new, f_new = cand, f_c
                        g_new = inner.g(theta_new)
                        ok = True
                        break
                    a *= 0.5
                if not ok:
                    break  # no descent possible at any scale: stop at best-seen
            else:
                a, f_new, g_new = res
                theta_new = theta + a * p
                alpha_last = a
            s = theta_new - theta
            yv = g_new - g_cur
            sy = float(s @ yv)
            if sy > 1e-16 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
                if dense:
                    rho = 1.0 / sy
                    Hy = Hinv @ yv
                    yHy = float(yv @ Hy)
                    Hinv += (
                        np.outer(s, s) * (rho * rho * yHy + rho)
                        - rho * (np.outer(Hy, s) + np.outer(s, Hy))
                    )
                    if trace is not None:
                        trace.append({"s": s.copy(), "y": yv.copy(), "Hinv": Hinv.copy(), "p": p.copy()})
                else:
                    hist.append((s, yv, 1.0 / sy))
                    if len(hist) > method.memory:
                        hist.pop(0)
                    if trace is not None:
                        trace.append({"s": s.copy(), "y": yv.copy(), "p": p.copy()})
            else:
                n_skipped += 1
            theta, f_cur, g_cur = theta_new, f_new, g_new
            best.offer(theta, f_cur)
            iters += 1

    elif isinstance(method, NewtonTR):
        delta = method.delta0
        while True:
            if true_grad_norm(g_cur) <= budget.grad_tol:
                status = "probably_converged"
                break
            if iters >= budget.max_iters or over_wall():
                break
            H = inner.h(theta)
            d = newton_tr_step(H, g_cur, delta)
            pred = _model_decrease(H, g_cur, d)
            dnorm = float(np.linalg.norm(d))
            f_trial = inner.f(theta + d)
            rho = (f_cur - f_trial) / pred if pred > 0 else -np.inf
            if rho > 0:
                theta = theta + d
                f_cur = f_trial
                g_cur = inner.g(theta)
                best.offer(theta, f_cur)
            if rho < 0.25:
                delta *= 0.25
            elif rho > 0.75 and dnorm >= 0.99 * delta:
                delta = min(2.0 * delta, method.delta_max)
            iters += 1
            if delta < 1e-18:
                break
    else:
        raise ValueError(f"unknown optimizer method: {method!r}")

    theta_out = best.theta
    g_out = inner.g(theta_out)
    report = ConvergenceReport(
        final_loss=best.f / unscale,
        grad_norm=true_grad_norm(g_out),
        iterations=iters,
        status=status,
        n_linesearch_failures=n_ls_fail,
        n_skipped_updates=n_skipped,
        wall_seconds=time.perf_counter() - clock0,
    )
    return theta_out, report


def minimize(
    net: Net,
    theta0: np.ndarray,
    data: Dataset,
    losscfg: LossConfig,
    method: OptimizerMethod,
    budget: Budget = Budget(),
) -> tuple[np.ndarray, ConvergenceReport]:
    """Minimize the data loss of a network; see :func:`minimize_objective`."""
    obj = as_objective(net, data, losscfg)
    return minimize_objective(obj, theta0, method, budget, eta=losscfg.eta)


def probably_converged_protocol_objective(
    obj: Objective,
    theta0: np.ndarray,
    epochs: int = 30,
    steps_per_epoch: int = 10_000,
    method: NewtonTR = NewtonTR(),
    grad_tol: float = 1e-16,
    eta: float = 1.0,
) -> tuple[np.ndarray, ConvergenceReport]:
    """Epoch-loop convergence heuristic: run Newton trust-region in epochs
    and stop the first time an epoch fails to decrease the loss.

    Status is probably_converged at the first non-decrease, not_converged if
    the loss kept strictly decreasing through every epoch; the report carries
    the epoch-end losses and the smallest Hessian eigenvalue at the end."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    theta = np.asarray(theta0, dtype=np.float64).copy()
    prev_loss = None  # first epoch never triggers; comparisons start at epoch 2
    epoch_losses = []
    total_iters = 0
    status = "not_converged"
    clock0 = time.perf_counter()
    for _ in range(epochs):
        theta, rep = minimize_objective(
            obj,
            theta,
            method,
            Budget(max_iters=steps_per_epoch, grad_tol=grad_tol),
            eta=eta,
        )
        total_iters += rep.iterations
        epoch_losses.append(rep.final_loss)
        if prev_loss is not None and rep.final_loss >= prev_loss:
            status = "probably_converged"
            break
        prev_loss = rep.final_loss
    g = obj.g(theta)
    H = obj.h(theta)
    report = ConvergenceReport(
        final_loss=epoch_losses[-1],
        grad_norm=float(np.linalg.norm(g)),
        iterations=total_iters,
        status=status,
        min_eigenvalue=min_eigenvalue(H),
        wall_seconds=time.perf_counter() - clock0,
        epoch_losses=epoch_losses,
    )
    return theta, report


def probably_converged_protocol(
    net: Net,
    theta0: np.ndarray,
    data: Dataset,
    losscfg: LossConfig,
    epochs: int = 30,
    steps_per_epoch: int = 10_000,
    method: NewtonTR = NewtonTR(),
    grad_tol: float = 1e-16,
) -> ConvergenceReport:
    """Network-level wrapper of the epoch protocol; returns the report."""
    obj = as_objective(net, data, losscfg)
    _, report = probably_converged_protocol_objective(
        obj,
        theta0,
        epochs=epochs,
        steps_per_epoch=steps_per_epoch,
        method=method,
        grad_tol=grad_tol,
        eta=losscfg.eta,
    )
    return report
