"""Trajectory comparison: high-accuracy reference runs, the distance and
progress metrics between a method's trajectory and the reference, and the
wall-clock-budgeted benchmark harness with CSV output.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .network import Dataset, LossConfig, Net
from .ode import (
    IntegratorConfig,
    IntegratorMethod,
    Rosenbrock,
    Trajectory,
    integrate,
    method_name,
)

__all__ = [
    "ComparisonRecord",
    "reference_trajectory",
    "traj_distance",
    "traj_progress",
    "benchmark",
    "write_benchmark_csv",
    "read_benchmark_csv",
]

CSV_COLUMNS = ["method", "seed", "budget_s", "d_m", "t_m", "final_loss", "steps"]


@dataclass
class ComparisonRecord:
    method: str
    seed: int
    budget_s: float
    d_m: float
    t_m: float
    final_loss: float
    steps: int  # accepted steps at the budget cutoff; enables exact replay
    grid_points: int = 0
    error: str | None = None


def reference_trajectory(
    net: Net,
    theta0: np.ndarray,
    data: Dataset,
    losscfg: LossConfig,
    t_end: float,
    tol: float = 1e-6,
    grid_points: int = 1000,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """High-accuracy flow solution: the stiff method at abstol=reltol=tol,
    snapshotted on a log grid; method and tolerance recorded in metadata."""
    intcfg = IntegratorConfig(
        method=Rosenbrock(),
        t_end=t_end,
        abstol=tol,
        reltol=tol,
        max_steps=max_steps,
        save_grid=grid_points,
    )
    traj = integrate(net, theta0, data, losscfg, intcfg)
    traj.metadata.update({"role": "reference", "tol": tol})
    return traj


def traj_distance(ref: Trajectory, m: Trajectory) -> float:
    """Mean over m's snapshots of the squared l2 distance to the nearest
    reference snapshot (brute-force nearest search)."""
    if ref.states.shape[1] != m.states.shape[1]:
        raise ValueError("trajectories have different parameter dimensions")
    if ref.states.shape[0] == 0 or m.states.shape[0] == 0:
        raise ValueError("trajectories must be non-empty")
    d2 = cdist(m.states, ref.states, "sqeuclidean")
    return float(d2.min(axis=1).mean())


def traj_progress(ref: Trajectory, theta_final: np.ndarray) -> float:
    """Reference grid time whose snapshot is nearest (squared l2) to
    theta_final; ties break toward the larger time."""
    theta_final = np.asarray(theta_final, dtype=np.float64)
    if ref.states.shape[1] != theta_final.shape[0]:
        raise ValueError("parameter dimension mismatch")
    d = np.sum((ref.states - theta_final) ** 2, axis=1)
    idx = np.flatnonzero(d == d.min())[-1]
    return float(ref.times[idx])


def benchmark(
    net: Net,
    theta0: np.ndarray,
    data: Dataset,
    losscfg: LossConfig,
    methods: list[IntegratorMethod],
    budgets: list[float],
    ref: Trajectory,
    seed: int = 0,
    grid_points: int = 1000,
    abstol: float = 1e-6,
    reltol: float = 1e-6,
    replay_steps: dict | None = None,
) -> list[ComparisonRecord]:
    """One wall-clock-budgeted integration per (method, budget), each compared
    against the reference.  With replay_steps (mapping (method, budget) ->
    accepted-step count, as recorded in a previous run's CSV), runs are capped
    by step count instead of the clock and reproduce exactly."""
    t_end = ref.final_time
    records: list[ComparisonRecord] = []
    for method in methods:
        for budget in budgets:
            name = method_name(method)
            replay = None
            if replay_steps is not None:
                replay = replay_steps.get((name, float(budget)))
            intcfg = IntegratorConfig(
                method=method,
                t_end=t_end,
                abstol=abstol,
                reltol=reltol,
                max_steps=replay if replay is not None else 10_000_000,
                wall_budget_seconds=None if replay is not None else budget,
                save_grid=grid_points,
            )
            try:
                traj = integrate(net, theta0, data, losscfg, intcfg)
                # d_m compares snapshots on the shared time grid; a truncated
                # run's appended end state is off-grid and only defines t_m
                on_grid = np.isin(traj.times, ref.times)
                grid_part = dataclasses.replace(
                    traj, times=traj.times[on_grid], states=traj.states[on_grid]
                )
                records.append(
                    ComparisonRecord(
                        method=name,
                        seed=seed,
                        budget_s=float(budget),
                        d_m=traj_distance(ref, grid_part),
                        t_m=traj_progress(ref, traj.final_state),
                        final_loss=float(traj.losses[-1]),
                        steps=traj.n_accepted,
                        grid_points=grid_points,
                    )
                )
            except Exception as exc:  # individual failures recorded, not fatal
                records.append(
                    ComparisonRecord(
                        method=name,
                        seed=seed,
                        budget_s=float(budget),
                        d_m=float("nan"),
                        t_m=float("nan"),
                        final_loss=float("nan"),
                        steps=0,
                        grid_points=grid_points,
                        error=str(exc),
                    )
                )
    return records


def write_benchmark_csv(records: list[ComparisonRecord], path) -> None:
    """Comparison records as CSV; floats via repr for exact round-trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.method,
                    r.seed,
                    repr(r.budget_s),
                    repr(r.d_m),
                    repr(r.t_m),
                    repr(r.final_loss),
                    r.steps,
                ]
            )


def read_benchmark_csv(path) -> list[ComparisonRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                ComparisonRecord(
                    method=row["method"],
                    seed=int(row["seed"]),
                    budget_s=float(row["budget_s"]),
                    d_m=float(row["d_m"]),
                    t_m=float(row["t_m"]),
                    final_loss=float(row["final_loss"]),
                    steps=int(row["steps"]),
                )
            )
    return records
