"""End-to-end acceptance checks.

Each test exercises one advertised capability at its stated tolerance and
reports a single PASS/FAIL line (collected into the terminal summary by
conftest).  Settings follow the corresponding unit suites; seeds are frozen so
every run is deterministic.
"""

import hashlib
import json
import time

import numpy as np
import pytest
import scipy.linalg

from conftest import record_acceptance, random_dataset, random_net

from gradflow import (
    Activation,
    Adam,
    AdaptiveRK45,
    BFGS,
    Budget,
    Dataset,
    Euler,
    IntegratorConfig,
    LayerSpec,
    LossConfig,
    Net,
    NewtonTR,
    RK4,
    Rosenbrock,
    benchmark,
    fd_gradient,
    fd_hessian,
    gradient,
    hessian,
    integrate,
    integrate_objective,
    minimize,
    mc_oracle,
    neti_gradient,
    neti_loss,
    neti_objective,
    neti_pack,
    neti_unpack,
    NetISpec,
    aligned_sq_distance,
    probably_converged_protocol_objective,
    read_run_json,
    reference_trajectory,
    two_layer_net,
)
from gradflow.cli import main as cli_main
from gradflow.datagen import teacher_student_dataset
from gradflow.derivatives import Objective, loss as data_loss
from gradflow.network import activation_triple, init_params


def _quadratic_objective(A, b):
    return Objective(
        dim=b.size,
        f=lambda th: 0.5 * float(th @ A @ th) - float(b @ th),
        g=lambda th: A @ th - b,
        h=lambda th: A.copy(),
    )


# --------------------------------------------------------------- criterion 1
def test_acceptance_1_derivative_exactness():
    rng = np.random.default_rng(20260816)
    t0 = time.perf_counter()
    worst_g = worst_h = 0.0
    for _ in range(50):
        net = random_net(rng, max_params=50)
        data = random_dataset(rng, net)
        theta = rng.standard_normal(net.param_count)
        cfg = LossConfig()
        g = gradient(net, theta, data, cfg)
        gf = fd_gradient(net, theta, data, cfg, step=1e-6)
        worst_g = max(worst_g, np.max(np.abs(g - gf)) / max(1.0, np.max(np.abs(g))))
        H = hessian(net, theta, data, cfg)
        Hf = fd_hessian(net, theta, data, cfg, step=1e-5)
        worst_h = max(worst_h, np.max(np.abs(H - Hf)) / max(1.0, np.max(np.abs(H))))
    wall = time.perf_counter() - t0
    ok = worst_g <= 1e-6 and worst_h <= 1e-5 and wall < 60
    record_acceptance(
        f"ACCEPTANCE 1: {'PASS' if ok else 'FAIL'} — 50 random nets: worst "
        f"gradient-vs-FD {worst_g:.2e} (<=1e-6), worst Hessian-vs-FD "
        f"{worst_h:.2e} (<=1e-5), {wall:.1f}s (<60s)"
    )
    assert ok


# --------------------------------------------------------------- criterion 2
def test_acceptance_2_round_off_floor():
    t0 = time.perf_counter()
    net = two_layer_net(2, 2, Activation.ERF_SCALED)
    hits, best = 0, np.inf
    for seed in range(10):
        theta_t = init_params(net, seed=2000 + seed)
        data = teacher_student_dataset(net, theta_t, n_samples=1000, seed=3000 + seed)
        theta0 = init_params(net, seed=4000 + seed)
        cfg = IntegratorConfig(method=AdaptiveRK45(), t_end=1e4, abstol=1e-10,
                               reltol=1e-10, max_steps=1000,
                               save_grid=np.array([0.0, 1e4]))
        warm = integrate(net, theta0, data, LossConfig(), cfg).final_state
        theta, _ = minimize(net, warm, data, LossConfig(), NewtonTR(0.1, 100.0),
                            Budget(max_iters=200, grad_tol=1e-16))
        mse = data_loss(net, theta, data, LossConfig())
        best = min(best, mse)
        hits += mse <= 1e-28
    wall = time.perf_counter() - t0
    ok = hits >= 1 and wall < 600
    record_acceptance(
        f"ACCEPTANCE 2: {'PASS' if ok else 'FAIL'} — {hits}/10 seeds reached "
        f"MSE<=1e-28 (best {best:.1e}), {wall:.1f}s (<600s)"
    )
    assert ok


# --------------------------------------------------------------- criterion 3
def test_acceptance_3_ode_oracle():
    rng = np.random.default_rng(20260816)
    net = Net(5, (LayerSpec(1, Activation.IDENTITY, has_bias=False),))
    X = rng.standard_normal((8, 5))
    data = Dataset(X, np.zeros((8, 1)))
    A = 2.0 * X.T @ X / 8
    theta0 = rng.standard_normal(5)
    T = 5.0
    exact = scipy.linalg.expm(-A * T) @ theta0

    errs = {}
    for method in (AdaptiveRK45(), Rosenbrock()):
        cfg = IntegratorConfig(method=method, t_end=T, abstol=1e-8, reltol=1e-8,
                               save_grid=np.array([0.0, T]))
        traj = integrate(net, theta0, data, LossConfig(), cfg)
        errs[type(method).__name__] = np.linalg.norm(traj.final_state - exact)

    rk4_errs = []
    for dt in (0.05, 0.025, 0.0125):
        cfg = IntegratorConfig(method=RK4(dt), t_end=T,
                               save_grid=np.array([0.0, T]))
        traj = integrate(net, theta0, data, LossConfig(), cfg)
        rk4_errs.append(np.linalg.norm(traj.final_state - exact))
    ratios = [a / b for a, b in zip(rk4_errs, rk4_errs[1:])]

    ok = (max(errs.values()) <= 1e-6
          and all(16 * 0.8 <= r <= 16 * 1.2 for r in ratios))
    record_acceptance(
        f"ACCEPTANCE 3: {'PASS' if ok else 'FAIL'} — matrix-exponential oracle "
        f"errors {errs['AdaptiveRK45']:.1e}/{errs['Rosenbrock']:.1e} (<=1e-6); "
        f"4th-order ratios {ratios[0]:.1f}, {ratios[1]:.1f} (16 +/- 20%)"
    )
    assert ok


# --------------------------------------------------------------- criterion 4
def test_acceptance_4_integrator_benchmark_ordering():
    t0 = time.perf_counter()
    net = two_layer_net(2, 8, Activation.ERF_SCALED)
    ds = {m: [] for m in ("euler", "adaptive_rk45", "rosenbrock")}
    ts = {m: [] for m in ("euler", "adaptive_rk45", "rosenbrock")}
    for seed in range(10):
        theta_t = init_params(net, seed=5000 + seed)
        data = teacher_student_dataset(net, theta_t, n_samples=1000, seed=6000 + seed)
        theta0 = init_params(net, seed=7000 + seed)
        ref = reference_trajectory(net, theta0, data, LossConfig(), t_end=1e4,
                                   tol=1e-6, grid_points=200)
        for r in benchmark(net, theta0, data, LossConfig(),
                           methods=[Euler(5e-3), AdaptiveRK45(), Rosenbrock()],
                           budgets=[2.0], ref=ref, seed=seed, grid_points=200):
            assert r.error is None
            ds[r.method].append(r.d_m)
            ts[r.method].append(r.t_m)
    dmed = {k: float(np.median(v)) for k, v in ds.items()}
    tmed = {k: float(np.median(v)) for k, v in ts.items()}
    wall = time.perf_counter() - t0
    ok = (dmed["rosenbrock"] <= dmed["adaptive_rk45"] <= dmed["euler"]
          and tmed["rosenbrock"] >= tmed["adaptive_rk45"] >= tmed["euler"]
          and wall < 1800)
    record_acceptance(
        f"ACCEPTANCE 4: {'PASS' if ok else 'FAIL'} — median d_m "
        f"ros {dmed['rosenbrock']:.1e} <= rk45 {dmed['adaptive_rk45']:.1e} <= "
        f"euler {dmed['euler']:.1e}; median t_m ros {tmed['rosenbrock']:.0f} >= "
        f"rk45 {tmed['adaptive_rk45']:.0f} >= euler {tmed['euler']:.0f}; "
        f"{wall:.0f}s (<1800s)"
    )
    assert ok


# --------------------------------------------------------------- criterion 5
def test_acceptance_5_optimizer_ordering():
    t0 = time.perf_counter()
    net = two_layer_net(2, 8, Activation.ERF_SCALED)
    res = {"newton_tr": [], "bfgs": [], "adam": []}
    for seed in range(10):
        theta_t = init_params(net, seed=5000 + seed)
        data = teacher_student_dataset(net, theta_t, n_samples=1000, seed=6000 + seed)
        theta0 = init_params(net, seed=7000 + seed)
        for name, method in (("newton_tr", NewtonTR(1.0, 100.0)),
                             ("bfgs", BFGS()), ("adam", Adam(lr=1e-2))):
            theta, _ = minimize(net, theta0, data, LossConfig(), method,
                                Budget(max_iters=150, grad_tol=1e-16))
            res[name].append(data_loss(net, theta, data, LossConfig()))
    med = {k: float(np.median(v)) for k, v in res.items()}
    wall = time.perf_counter() - t0
    ok = med["newton_tr"] <= med["bfgs"] <= med["adam"] and wall < 900
    record_acceptance(
        f"ACCEPTANCE 5: {'PASS' if ok else 'FAIL'} — median MSE at 150 "
        f"iterations: newton_tr {med['newton_tr']:.1e} <= bfgs "
        f"{med['bfgs']:.1e} <= adam {med['adam']:.1e}; {wall:.0f}s (<900s)"
    )
    assert ok


# --------------------------------------------------------------- criterion 6
def test_acceptance_6_protocol_both_branches():
    rng = np.random.default_rng(20260816)
    Q = np.linalg.qr(rng.standard_normal((6, 6)))[0]
    A = Q @ np.diag(np.geomspace(1.0, 20.0, 6)) @ Q.T
    b = rng.standard_normal(6)
    _, rep_a = probably_converged_protocol_objective(
        _quadratic_objective(A, b), np.zeros(6), epochs=5, steps_per_epoch=50,
        method=NewtonTR(10.0, 1e6),
    )
    branch_a = (rep_a.status == "probably_converged"
                and len(rep_a.epoch_losses) <= 2 and rep_a.min_eigenvalue > 0)

    ill = _quadratic_objective(np.diag(np.geomspace(1e-10, 1.0, 6)), np.ones(6))
    _, rep_b = probably_converged_protocol_objective(
        ill, np.zeros(6), epochs=3, steps_per_epoch=2,
        method=NewtonTR(delta0=1e-3, delta_max=1e-3), grad_tol=0.0,
    )
    branch_b = rep_b.status == "not_converged"

    ok = branch_a and branch_b
    record_acceptance(
        f"ACCEPTANCE 6: {'PASS' if ok else 'FAIL'} — convex quadratic: "
        f"{rep_a.status} in {len(rep_a.epoch_losses)} epochs, min eigenvalue "
        f"{rep_a.min_eigenvalue:.2f}>0; condition-1e10 valley on a tiny "
        f"budget: {rep_b.status}"
    )
    assert ok


# --------------------------------------------------------------- criterion 7
def test_acceptance_7_population_kernels():
    t0 = time.perf_counter()
    worst_z = worst_fd = 0.0
    for off, act in ((0, Activation.IDENTITY), (1, Activation.ERF_SCALED),
                     (2, Activation.RELU)):
        for i in range(20):
            rng = np.random.default_rng(9000 + 100 * off + i)
            D = int(rng.integers(2, 5))
            K = int(rng.integers(1, 4))
            M = int(rng.integers(1, 4))
            spec = NetISpec(D, rng.standard_normal((K, D)), rng.standard_normal(K),
                            rng.standard_normal((M, D)), rng.standard_normal(M),
                            activation=act)
            val, se = mc_oracle(spec, 1_000_000, seed=40_000 + 100 * off + i)
            worst_z = max(worst_z, abs(neti_loss(spec) - val) / se)
            x0 = neti_pack(spec)
            g = neti_gradient(spec)
            fd = np.empty_like(x0)
            for j in range(x0.size):
                xp, xm = x0.copy(), x0.copy()
                xp[j] += 1e-6
                xm[j] -= 1e-6
                fd[j] = (neti_loss(neti_unpack(spec, xp))
                         - neti_loss(neti_unpack(spec, xm))) / 2e-6
            worst_fd = max(worst_fd,
                           np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g)))
    wall = time.perf_counter() - t0
    ok = worst_z <= 4.0 and worst_fd <= 1e-6 and wall < 300
    record_acceptance(
        f"ACCEPTANCE 7: {'PASS' if ok else 'FAIL'} — 20 specs x 3 activations: "
        f"worst |analytic-MC|/SE {worst_z:.2f} (<=4), worst gradient-vs-FD "
        f"{worst_fd:.1e} (<=1e-6), {wall:.0f}s (<300s)"
    )
    assert ok


# --------------------------------------------------------------- criterion 8
def test_acceptance_8_one_over_n_rate():
    t0 = time.perf_counter()
    D, K, M, T = 4, 2, 2, 20.0
    net = Net(D, (LayerSpec(K, Activation.ERF_SCALED, has_bias=False),
                  LayerSpec(1, Activation.IDENTITY, has_bias=False)))
    slopes = []
    for seed in range(10):
        rng = np.random.default_rng(8000 + seed)
        V = rng.standard_normal((M, D))
        a_star = rng.standard_normal(M)
        spec0 = NetISpec(D, rng.standard_normal((K, D)), rng.standard_normal(K),
                         V, a_star, activation=Activation.ERF_SCALED)
        x0 = neti_pack(spec0)
        X_all = rng.standard_normal((100_000, D))
        y_all = activation_triple(Activation.ERF_SCALED, X_all @ V.T)[0] @ a_star
        cfg = IntegratorConfig(method=AdaptiveRK45(), t_end=T, abstol=1e-7,
                               reltol=1e-7, save_grid=np.array([0.0, T]))
        # infinite-data flow; unit step size so it matches the factor-of-two
        # difference in the empirical loss normalization at eta = 0.5
        pop = integrate_objective(neti_objective(spec0), x0, cfg, eta=1.0)
        pop_spec = neti_unpack(spec0, pop.final_state)
        ns = (1_000, 10_000, 100_000)
        dists = []
        for n in ns:
            data = Dataset(X_all[:n], y_all[:n])
            emp = integrate(net, x0.copy(), data, LossConfig(eta=0.5), cfg)
            dists.append(aligned_sq_distance(neti_unpack(spec0, emp.final_state),
                                             pop_spec))
        slopes.append(np.polyfit(np.log(ns), np.log(dists), 1)[0])
    med = float(np.median(slopes))
    wall = time.perf_counter() - t0
    ok = -1.3 <= med <= -0.7 and wall < 3600
    record_acceptance(
        f"ACCEPTANCE 8: {'PASS' if ok else 'FAIL'} — median log-log slope of "
        f"aligned squared parameter distance vs N over 10 seeds: {med:+.3f} "
        f"(in [-1.3,-0.7]), {wall:.0f}s (<3600s)"
    )
    assert ok


# --------------------------------------------------------------- criterion 9
def test_acceptance_9_hessian_cost_scaling():
    times = {}
    for hidden, P in ((10, 41), (50, 201), (100, 401)):
        net = two_layer_net(2, hidden, Activation.TANH)
        assert net.param_count == P
        theta = init_params(net, seed=1)
        rng = np.random.default_rng(2)
        data = Dataset(rng.standard_normal((10_000, 2)),
                       rng.standard_normal((10_000, 1)))
        hessian(net, theta, data, LossConfig())  # warm-up
        best = np.inf
        for _ in range(2):
            t0 = time.perf_counter()
            hessian(net, theta, data, LossConfig())
            best = min(best, time.perf_counter() - t0)
        times[P] = best
    Ps = sorted(times)
    slope = float(np.polyfit(np.log(Ps), np.log([times[p] for p in Ps]), 1)[0])
    ok = times[41] < 5.0 and slope <= 2.3
    record_acceptance(
        f"ACCEPTANCE 9: {'PASS' if ok else 'FAIL'} — Hessian at P=41, N=1e4: "
        f"{times[41]:.3f}s (<5s); cost-vs-P log-log slope {slope:.2f} (<=2.3) "
        f"over P=41/201/401"
    )
    assert ok


# -------------------------------------------------------------- criterion 10
def test_acceptance_10_bit_exact_reruns(tmp_path):
    def digest(p):
        return hashlib.sha256(p.read_bytes()).hexdigest()

    net_cfg = {"input_dim": 2, "layers": [[3, "tanh", True], [1, "identity", True]]}
    data_cfg = {"source": "synthetic", "teacher": net_cfg, "teacher_seed": 5,
                "n_samples": 32, "seed": 6}

    int_cfg = tmp_path / "int.json"
    int_cfg.write_text(json.dumps({
        "net": net_cfg, "data": data_cfg, "theta0": {"seed": 8},
        "method": "euler", "dt": 1e-3, "t_end": 50.0,
        "wall_budget_seconds": 0.3, "grid_points": 40,
    }))
    i1, i2 = tmp_path / "i1", tmp_path / "i2"
    assert cli_main(["integrate", "--config", str(int_cfg), "--out", str(i1)]) == 0
    assert cli_main(["integrate", "--config", str(i1 / "run.json"),
                     "--out", str(i2)]) == 0
    int_ok = all(
        digest(i1 / name) == digest(i2 / name)
        for name in ("trajectory/states.bin", "trajectory/scalars.csv",
                     "theta_final.bin")
    )

    bench_cfg = tmp_path / "bench.json"
    bench_cfg.write_text(json.dumps({
        "net": net_cfg, "data": data_cfg,
        "methods": [{"name": "euler", "dt": 1e-3}, {"name": "adaptive_rk45"}],
        "budgets": [0.05], "seeds": [0], "t_end": 2.0, "grid_points": 30,
    }))
    b1, b2 = tmp_path / "b1", tmp_path / "b2"
    assert cli_main(["bench", "--config", str(bench_cfg), "--out", str(b1)]) == 0
    assert read_run_json(b1 / "run.json")["config"]["replay"]
    assert cli_main(["bench", "--config", str(b1 / "run.json"),
                     "--out", str(b2)]) == 0
    bench_ok = (b1 / "bench.csv").read_bytes() == (b2 / "bench.csv").read_bytes()

    ok = int_ok and bench_ok
    record_acceptance(
        f"ACCEPTANCE 10: {'PASS' if ok else 'FAIL'} — wall-budgeted integrate "
        f"rerun from run.json bit-identical: {int_ok}; benchmark CSV rerun "
        f"byte-identical: {bench_ok}"
    )
    assert ok
