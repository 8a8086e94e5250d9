"""Trajectory comparison metrics, high-accuracy reference runs, and the
budget-matched integrator benchmark with its CSV round trip."""

import numpy as np
import pytest
import scipy.linalg

from gradflow import (
    Activation,
    ComparisonRecord,
    Dataset,
    Euler,
    EvalWork,
    IntegratorConfig,
    LayerSpec,
    LossConfig,
    Net,
    Rosenbrock,
    AdaptiveRK45,
    Trajectory,
    benchmark,
    integrate,
    read_benchmark_csv,
    reference_trajectory,
    traj_distance,
    traj_progress,
    write_benchmark_csv,
)
from gradflow.network import init_params


def _toy_traj(times, states_1d):
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states_1d, dtype=np.float64)[:, None]
    n = times.size
    return Trajectory(
        times=times,
        states=states,
        losses=np.zeros(n),
        grad_norms=np.zeros(n),
        work=EvalWork(),
        terminated_by="reached_t_end",
        n_accepted=n,
    )


def _linear_problem(rng, d=4, n=12):
    """Linear readout net; squared loss is quadratic with A = 2 X^T X / n."""
    net = Net(d, (LayerSpec(1, Activation.IDENTITY, has_bias=False),))
    X = rng.standard_normal((n, d))
    data = Dataset(X, np.zeros((n, 1)))
    A = 2.0 * X.T @ X / n
    return net, data, A


# ------------------------------------------------------------------- distance
def test_distance_mean_of_nearest_squared_gaps():
    ref = _toy_traj([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    m = _toy_traj([0.0, 1.0], [0.4, 1.6])
    assert traj_distance(ref, m) == pytest.approx(0.16, abs=1e-15)


def test_distance_zero_for_identical_trajectory():
    ref = _toy_traj([0.0, 0.5, 1.0, 1.5, 2.0], [3.0, 2.0, 1.5, 1.25, 1.0])
    assert traj_distance(ref, ref) == 0.0


def test_distance_zero_for_single_point_on_reference():
    ref = _toy_traj(np.linspace(0, 2, 6), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    m = _toy_traj([0.7], [4.0])  # coincides with the fifth snapshot
    assert traj_distance(ref, m) == 0.0


def test_distance_validates_shapes():
    ref = _toy_traj([0.0, 1.0], [0.0, 1.0])
    bad = Trajectory(
        times=np.array([0.0]),
        states=np.zeros((1, 3)),
        losses=np.zeros(1),
        grad_norms=np.zeros(1),
        work=EvalWork(),
        terminated_by="reached_t_end",
    )
    with pytest.raises(ValueError):
        traj_distance(ref, bad)


# ------------------------------------------------------------------- progress
def test_progress_endpoints_and_interior():
    ref = _toy_traj([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    assert traj_progress(ref, np.array([2.0])) == 2.0  # last snapshot
    assert traj_progress(ref, np.array([0.0])) == 0.0  # start
    assert traj_progress(ref, np.array([1.4])) == 1.0  # nearest interior


def test_progress_ties_break_toward_larger_time():
    ref = _toy_traj([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    assert traj_progress(ref, np.array([1.5])) == 2.0
    flat = _toy_traj([0.0, 1.0, 2.0], [7.0, 7.0, 7.0])
    assert traj_progress(flat, np.array([7.0])) == 2.0


# ------------------------------------------------------------------ reference
def test_reference_tracks_exact_flow_at_every_snapshot(rng):
    net, data, A = _linear_problem(rng)
    theta0 = rng.standard_normal(4)
    T = 5.0
    ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=T, tol=1e-6,
                               grid_points=60)
    assert ref.times[0] == 0.0
    assert np.array_equal(ref.states[0], theta0)
    assert ref.metadata["role"] == "reference"
    assert ref.metadata["tol"] == 1e-6
    errs = [
        np.linalg.norm(ref.states[i] - scipy.linalg.expm(-A * t) @ theta0)
        for i, t in enumerate(ref.times)
    ]
    assert max(errs) <= 1e-5


def test_reference_tighter_tolerance_never_hurts(rng):
    net, data, A = _linear_problem(rng)
    theta0 = rng.standard_normal(4)

    def max_err(tol):
        ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=4.0,
                                   tol=tol, grid_points=40)
        return max(
            np.linalg.norm(ref.states[i] - scipy.linalg.expm(-A * t) @ theta0)
            for i, t in enumerate(ref.times)
        )

    assert max_err(1e-7) <= max_err(1e-6) + 1e-14


# ------------------------------------------------------------------ benchmark
def test_benchmark_zero_gradient_start_has_zero_distance(rng):
    net, data, _ = _linear_problem(rng)
    theta0 = np.zeros(4)  # exact minimum: targets are zero
    ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=2.0,
                               grid_points=30)
    records = benchmark(net, theta0, data, LossConfig(),
                        methods=[Euler(0.01), AdaptiveRK45(), Rosenbrock()],
                        budgets=[0.05], ref=ref, grid_points=30)
    assert len(records) == 3
    for r in records:
        assert r.error is None
        assert r.d_m == 0.0


def test_benchmark_replay_reproduces_records_exactly(rng):
    net, data, _ = _linear_problem(rng)
    theta0 = rng.standard_normal(4)
    ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=3.0,
                               grid_points=50)
    methods = [Euler(0.004), AdaptiveRK45()]
    first = benchmark(net, theta0, data, LossConfig(), methods=methods,
                      budgets=[0.05], ref=ref, grid_points=50)
    replay = {(r.method, r.budget_s): r.steps for r in first}
    second = benchmark(net, theta0, data, LossConfig(), methods=methods,
                       budgets=[0.05], ref=ref, grid_points=50,
                       replay_steps=replay)
    for a, b in zip(first, second):
        assert (b.method, b.seed, b.budget_s) == (a.method, a.seed, a.budget_s)
        assert b.steps == a.steps
        assert b.d_m == a.d_m and b.t_m == a.t_m and b.final_loss == a.final_loss


def test_benchmark_more_steps_never_lose_progress(rng):
    net, data, _ = _linear_problem(rng)
    theta0 = rng.standard_normal(4)
    ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=3.0,
                               grid_points=50)
    t_ms = []
    for cap in (25, 50, 100, 200, 400):
        recs = benchmark(net, theta0, data, LossConfig(), methods=[Euler(0.004)],
                         budgets=[1.0], ref=ref, grid_points=50,
                         replay_steps={("euler", 1.0): cap})
        t_ms.append(recs[0].t_m)
    assert all(b >= a for a, b in zip(t_ms, t_ms[1:]))
    assert t_ms[-1] > t_ms[0]


def test_benchmark_records_failures_without_raising(rng):
    net, data, _ = _linear_problem(rng)
    # invalid fixed step cannot be constructed; instead sabotage the reference
    ref = _toy_traj([0.0, 1.0], [0.0, 1.0])  # wrong parameter dimension
    records = benchmark(net, rng.standard_normal(4), data, LossConfig(),
                        methods=[Euler(0.01)], budgets=[0.01], ref=ref)
    assert len(records) == 1
    assert records[0].error is not None
    assert np.isnan(records[0].d_m)


# ------------------------------------------------------------------------ CSV
def test_benchmark_csv_round_trip(tmp_path):
    records = [
        ComparisonRecord("euler", 3, 0.25, 1.2345678901234567e-9,
                         0.7071067811865476, 4.9e-324, steps=1234),
        ComparisonRecord("rosenbrock", 4, 1.0, 0.0, 3.0, 1.7976931348623157e308,
                         steps=7),
    ]
    path = tmp_path / "bench.csv"
    write_benchmark_csv(records, path)
    header = path.read_text().splitlines()[0]
    assert header == "method,seed,budget_s,d_m,t_m,final_loss,steps"
    back = read_benchmark_csv(path)
    for a, b in zip(records, back):
        assert (b.method, b.seed, b.steps) == (a.method, a.seed, a.steps)
        assert b.budget_s == a.budget_s
        assert b.d_m == a.d_m and b.t_m == a.t_m and b.final_loss == a.final_loss


def test_benchmark_csv_rewrite_is_byte_identical(tmp_path, rng):
    net, data, _ = _linear_problem(rng)
    theta0 = rng.standard_normal(4)
    ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=2.0,
                               grid_points=30)
    first = benchmark(net, theta0, data, LossConfig(), methods=[AdaptiveRK45()],
                      budgets=[0.05], ref=ref, grid_points=30)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_benchmark_csv(first, p1)
    replay = {(r.method, r.budget_s): r.steps for r in first}
    second = benchmark(net, theta0, data, LossConfig(), methods=[AdaptiveRK45()],
                       budgets=[0.05], ref=ref, grid_points=30,
                       replay_steps=replay)
    write_benchmark_csv(second, p2)
    assert p1.read_bytes() == p2.read_bytes()
