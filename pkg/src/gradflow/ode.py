"""Continuous-time descent: integrates theta' = -eta * grad L(theta) with
fixed-step explicit methods (euler, rk4), an embedded adaptive explicit pair
(adaptive_rk45, Dormand-Prince 5(4) with FSAL), and a linearly implicit
stiff method (rosenbrock, a 3(2) pair using the exact Hessian as Jacobian
with one LU factorization per step).

Snapshots are taken on a caller-supplied or log-spaced grid via cubic Hermite
interpolation of accepted steps, so the stepping sequence is independent of
the output grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .derivatives import EvalWork, Objective, as_objective, gradient, hessian
from .network import Dataset, LossConfig, Net

__all__ = [
    "Euler",
    "RK4",
    "AdaptiveRK45",
    "Rosenbrock",
    "IntegratorMethod",
    "IntegratorConfig",
    "Trajectory",
    "method_from_name",
    "method_name",
    "log_grid",
    "flow_rhs",
    "flow_jacobian",
    "integrate",
    "integrate_objective",
]

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0
_TINY_ERR = 1e-10


@dataclass(frozen=True)
class Euler:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class RK4:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class AdaptiveRK45:
    pass


@dataclass(frozen=True)
class Rosenbrock:
    pass


IntegratorMethod = Union[Euler, RK4, AdaptiveRK45, Rosenbrock]


def method_name(method: IntegratorMethod) -> str:
    return {
        Euler: "euler",
        RK4: "rk4",
        AdaptiveRK45: "adaptive_rk45",
        Rosenbrock: "rosenbrock",
    }[type(method)]


def method_from_name(name: str, dt: float | None = None) -> IntegratorMethod:
    if name == "euler":
        if dt is None:
            raise ValueError("euler requires dt")
        return Euler(dt)
    if name == "rk4":
        if dt is None:
            raise ValueError("rk4 requires dt")
        return RK4(dt)
    if name == "adaptive_rk45":
        return AdaptiveRK45()
    if name == "rosenbrock":
        return Rosenbrock()
    raise ValueError(f"unknown integrator method: {name!r}")


def log_grid(T: float, n: int, t_min: float | None = None) -> np.ndarray:
    """n snapshot times: 0, then n-1 points log-spaced up to exactly T."""
    if not T > 0:
        raise ValueError("T must be positive")
    if n < 2:
        raise ValueError("need at least 2 grid points")
    if t_min is None:
        t_min = T * 1e-8
    if not 0 < t_min <= T:
        raise ValueError("t_min must lie in (0, T]")
    pts = np.geomspace(t_min, T, n - 1)
    pts[-1] = T
    return np.concatenate([[0.0], pts])


@dataclass(frozen=True)
class IntegratorConfig:
    method: IntegratorMethod
    t_end: float
    abstol: float = 1e-6
    reltol: float = 1e-6
    max_steps: int = 10_000_000
    wall_budget_seconds: float | None = None
    save_grid: Union[int, np.ndarray] = 1000

    def __post_init__(self):
        if not (self.abstol > 0 and self.reltol > 0):
            raise ValueError("abstol and reltol must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def resolve_grid(self) -> np.ndarray:
        if isinstance(self.save_grid, (int, np.integer)):
            if self.save_grid < 2:
                raise ValueError("save_grid needs at least 2 points")
            return log_grid(self.t_end, int(self.save_grid))
        grid = np.asarray(self.save_grid, dtype=np.float64)
        if grid.ndim != 1 or grid.shape[0] < 1:
            raise ValueError("save_grid must be a 1-D time list")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("save_grid times must be strictly increasing")
        if grid[0] < 0 or grid[-1] > self.t_end * (1 + 1e-12):
            raise ValueError("save_grid times must lie within [0, t_end]")
        if grid[0] != 0.0:
            grid = np.concatenate([[0.0], grid])
        return grid


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_snapshots, P)
    losses: np.ndarray
    grad_norms: np.ndarray
    work: EvalWork
    terminated_by: str  # reached_t_end | budget | max_steps | step_failure
    n_accepted: int = 0
    n_rejected: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


def flow_rhs(
    net: Net, theta: np.ndarray, data: Dataset, cfg: LossConfig = LossConfig()
) -> np.ndarray:
    """Right-hand side of the descent flow: -eta * gradient."""
    return -(cfg.eta * gradient(net, theta, data, cfg))


def flow_jacobian(
    net: Net, theta: np.ndarray, data: Dataset, cfg: LossConfig = LossConfig()
) -> np.ndarray:
    """Jacobian of the flow: -eta * Hessian (symmetric)."""
    return -(cfg.eta * hessian(net, theta, data, cfg))


class _GridSampler:
    """Streams snapshots onto a fixed time grid as steps are accepted,
    interpolating inside each accepted step with cubic Hermite polynomials."""

    def __init__(self, grid: np.ndarray, theta0: np.ndarray):
        self.grid = grid
        self.idx = 1  # grid[0] == 0 recorded immediately
        self.times = [0.0]
        self.states = [theta0.copy()]

    def emit(self, t0, y0, f0, t1, y1, f1):
        h = t1 - t0
        tol = 1e-12 * max(1.0, abs(t1))
        while self.idx < len(self.grid) and self.grid[self.idx] <= t1 + tol:
            t = self.grid[self.idx]
            s = (t - t0) / h
            if s >= 1.0:
                y = y1.copy()
            elif s <= 0.0:
                y = y0.copy()
            else:
                s2, s3 = s * s, s * s * s
                y = (
                    (2 * s3 - 3 * s2 + 1) * y0
                    + (s3 - 2 * s2 + s) * h * f0
                    + (-2 * s3 + 3 * s2) * y1
                    + (s3 - s2) * h * f1
                )
            self.times.append(t)
            self.states.append(y)
            self.idx += 1

    def append_final(self, t, y):
        if t > self.times[-1]:
            self.times.append(t)
            self.states.append(y.copy())


def _error_norm(e, y0, y1, abstol, reltol) -> float:
    sc = abstol + reltol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((e / sc) ** 2)))


def _initial_step(rhs, y0, f0, T, abstol, reltol, order) -> float:
    """Classic two-probe heuristic for the first adaptive step size."""
    sc = abstol + reltol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / sc) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, T)
    f1 = rhs(y0 + h0 * f0)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1, T)


# Dormand-Prince 5(4) tableau (FSAL: last stage of an accepted step is the
# first stage of the next).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_ERR = _DP_B5 - _DP_B4

# 3-stage, order-3(2) Rosenbrock coefficients (L-stable, 2 function
# evaluations and one LU factorization per step).
_ROS_GAMMA = 0.43586652150845899
_ROS_A = (1.0, 1.0, 0.0)  # a21; a31, a32
_ROS_C = (-1.0156171083877702, 4.07599564525377, 9.207679429833079)  # c21; c31, c32
_ROS_M = (1.0, 6.169794704382824, -0.4277225654321857)
_ROS_E = (0.5, -2.907955871680547, 0.2235406989781157)


def integrate_objective(
    obj: Objective,
    theta0: np.ndarray,
    intcfg: IntegratorConfig,
    eta: float = 1.0,
) -> Trajectory:
    """Advance theta' = -eta * grad f from theta0 to t_end, snapshotting on
    the configured grid.  Wall budget and max_steps are checked between
    accepted steps, so the accepted-step sequence is deterministic and a run
    can be replayed exactly by capping max_steps at a recorded count."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (obj.dim,):
        raise ValueError(f"theta0 has shape {theta0.shape}, expected ({obj.dim},)")
    T = intcfg.t_end
    grid = intcfg.resolve_grid()
    method = intcfg.method

    def rhs(th):
        return -(eta * obj.g(th))

    def jac(th):
        return -(eta * obj.h(th))

    sampler = _GridSampler(grid, theta0)
    t = 0.0
    y = theta0.copy()
    f = rhs(y)
    terminated = "reached_t_end"
    n_acc = 0
    n_rej = 0
    clock0 = time.perf_counter()

    def out_of_budget():
        return (
            intcfg.wall_budget_seconds is not None
            and time.perf_counter() - clock0 >= intcfg.wall_budget_seconds
        )

    if isinstance(method, (Euler, RK4)):
        dt = method.dt
        while t < T * (1 - 1e-15):
            if n_acc >= intcfg.max_steps:
                terminated = "max_steps"
                break
            if out_of_budget():
                terminated = "budget"
                break
            h = min(dt, T - t)
            if isinstance(method, Euler):
                y1 = y + h * f
            else:
                k1 = f
                k2 = rhs(y + (h / 2) * k1)
                k3 = rhs(y + (h / 2) * k2)
                k4 = rhs(y + h * k3)
                y1 = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            f1 = rhs(y1)
            t1 = t + h
            sampler.emit(t, y, f, t1, y1, f1)
            t, y, f = t1, y1, f1
            n_acc += 1
    elif isinstance(method, AdaptiveRK45):
        order = 5
        alpha, beta = 0.7 / order, 0.4 / order
        h = _initial_step(rhs, y, f, T, intcfg.abstol, intcfg.reltol, order)
        err_prev = 1e-4
        while t < T * (1 - 1e-15):
            if n_acc >= intcfg.max_steps:
                terminated = "max_steps"
                break
            if out_of_budget():
                terminated = "budget"
                break
            accepted = False
            while not accepted:
                h = min(h, T - t)
                if not np.isfinite(h) or h < 1e-14 * max(1.0, abs(t)):
                    terminated = "step_failure"
                    break
                k = [f]
                for i in range(1, 7):
                    yi = y + h * (np.stack(k, axis=1) @ _DP_A[i])
                    k.append(rhs(yi))
                K = np.stack(k, axis=1)
                y1 = y + h * (K @ _DP_B5)
                err = _error_norm(
                    h * (K @ _DP_ERR), y, y1, intcfg.abstol, intcfg.reltol
                )
                if not np.isfinite(err):
                    n_rej += 1
                    h *= _FAC_MIN
                elif err <= 1.0:
                    f1 = k[6]  # FSAL: stage 7 is rhs at (t+h, y1)
                    t1 = t + h
                    sampler.emit(t, y, f, t1, y1, f1)
                    t, y, f = t1, y1, f1
                    n_acc += 1
                    err = max(err, _TINY_ERR)
                    fac = _SAFETY * err ** (-alpha) * err_prev**beta
                    h *= min(_FAC_MAX, max(_FAC_MIN, fac))
                    err_prev = err
                    accepted = True
                else:
                    n_rej += 1
                    h *= min(1.0, max(_FAC_MIN, _SAFETY * err ** (-1.0 / order)))
            if terminated == "step_failure":
                break
    elif isinstance(method, Rosenbrock):
        order = 3
        alpha, beta = 0.7 / order, 0.4 / order
        h = _initial_step(rhs, y, f, T, intcfg.abstol, intcfg.reltol, order)
        err_prev = 1e-4
        eye = np.eye(obj.dim)
        while t < T * (1 - 1e-15):
            if n_acc >= intcfg.max_steps:
                terminated = "max_steps"
                break
            if out_of_budget():
                terminated = "budget"
                break
            J = jac(y)
            accepted = False
            while not accepted:
                h = min(h, T - t)
                if not np.isfinite(h) or h < 1e-14 * max(1.0, abs(t)):
                    terminated = "step_failure"
                    break
                try:
                    lu = lu_factor(eye / (h * _ROS_GAMMA) - J)
                    k1 = lu_solve(lu, f)
                    y2 = y + _ROS_A[0] * k1
                    f2 = rhs(y2)
                    k2 = lu_solve(lu, f2 + (_ROS_C[0] / h) * k1)
                    # a31 = 1, a32 = 0: stage 3 reuses the stage-2 state and f2.
                    k3 = lu_solve(
                        lu, f2 + (_ROS_C[1] / h) * k1 + (_ROS_C[2] / h) * k2
                    )
                    y1 = y + _ROS_M[0] * k1 + _ROS_M[1] * k2 + _ROS_M[2] * k3
                    e = _ROS_E[0] * k1 + _ROS_E[1] * k2 + _ROS_E[2] * k3
                    err = _error_norm(e, y, y1, intcfg.abstol, intcfg.reltol)
                except (ValueError, np.linalg.LinAlgError):
                    err = np.inf  # non-finite stage values; retry smaller
                if not np.isfinite(err):
                    n_rej += 1
                    h *= _FAC_MIN
                elif err <= 1.0:
                    f1 = rhs(y1)
                    t1 = t + h
                    sampler.emit(t, y, f, t1, y1, f1)
                    t, y, f = t1, y1, f1
                    n_acc += 1
                    err = max(err, _TINY_ERR)
                    fac = _SAFETY * err ** (-alpha) * err_prev**beta
                    h *= min(_FAC_MAX, max(_FAC_MIN, fac))
                    err_prev = err
                    accepted = True
                else:
                    n_rej += 1
                    h *= min(1.0, max(_FAC_MIN, _SAFETY * err ** (-1.0 / order)))
            if terminated == "step_failure":
                break
    else:
        raise ValueError(f"unknown integrator method: {method!r}")

    if terminated != "reached_t_end":
        sampler.append_final(t, y)

    times = np.asarray(sampler.times)
    states = np.asarray(sampler.states)
    losses = np.array([obj.f(s) for s in states])
    grad_norms = np.array([float(np.linalg.norm(obj.g(s))) for s in states])
    return Trajectory(
        times=times,
        states=states,
        losses=losses,
        grad_norms=grad_norms,
        work=obj.work,
        terminated_by=terminated,
        n_accepted=n_acc,
        n_rejected=n_rej,
        metadata={
            "method": method_name(method),
            "abstol": intcfg.abstol,
            "reltol": intcfg.reltol,
            "t_end": T,
            "eta": eta,
            "grid_points": len(grid),
        },
    )


def integrate(
    net: Net,
    theta0: np.ndarray,
    data: Dataset,
    losscfg: LossConfig,
    intcfg: IntegratorConfig,
) -> Trajectory:
    """Integrate the descent flow of the data loss from theta0."""
    obj = as_objective(net, data, losscfg)
    traj = integrate_objective(obj, theta0, intcfg, eta=losscfg.eta)
    traj.metadata["net"] = net.describe()
    return traj
